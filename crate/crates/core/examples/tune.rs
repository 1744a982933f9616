//! Scratch harness for sizing the acceptance benchmark. Not part of the
//! shipped surface; run with `cargo run --release -p redlab-core --example tune`.

use std::time::Instant;

use redlab_core::attack::{AttackMethod, AttackSpec};
use redlab_core::data::{synth_dataset, LabeledImages, SyntheticSpec};
use redlab_core::eval::evaluate_mpn;
use redlab_core::parser::{build_mpn, train_mpn, Backbone, MpnModel, MpnRecipe};
use redlab_core::redset::{
    assemble, generate_records, split_images, AttributeSchema, DatasetManifest, GenerationOptions,
    ImageSplit, InputFormat, ParsingDataset,
};
use redlab_core::victim::{attribute_grid, zoo_build, ArchFamily, TrainRecipe, Zoo};

fn manifest(format: InputFormat) -> DatasetManifest {
    DatasetManifest {
        format,
        attack_hash: "tune".into(),
        zoo_hash: "tune".into(),
        split_seed: 1,
        retain_failures: false,
        balanced: false,
        per_victim: vec![],
        example_count: 0,
    }
}

fn records_to_dataset(
    zoo: &Zoo,
    schema: &AttributeSchema,
    images: &LabeledImages,
    spec: &AttackSpec,
    format: InputFormat,
) -> ParsingDataset {
    let opts = GenerationOptions::default();
    let (recs, _) = generate_records(zoo, images, spec, &opts).unwrap();
    assemble(&recs, schema, format, manifest(format), false).unwrap()
}

fn fit_mpn(
    schema: &AttributeSchema,
    shape: &[usize],
    ds: &ParsingDataset,
    epochs: usize,
) -> MpnModel {
    let mut mpn = build_mpn(Backbone::Mlp, schema, shape, 7).unwrap();
    let recipe = MpnRecipe {
        epochs,
        batch_size: 64,
        lr: 0.05,
        seed: 7,
        ..MpnRecipe::default()
    };
    train_mpn(&mut mpn, ds, &recipe).unwrap();
    mpn
}

fn main() {
    let spec = SyntheticSpec {
        classes: 10,
        image_size: 16,
        template_seed: 17,
        noise_sigma: 0.12,
        samples_per_class: 30,
    };
    let data = synth_dataset(&spec).unwrap();
    let split: ImageSplit = split_images(&data, 0.8, 1).unwrap();
    let grid = attribute_grid(&[ArchFamily::Resnet9]);
    let recipe = TrainRecipe {
        epochs: 8,
        batch_size: 32,
        lr: 0.05,
        width: 0.0625,
        seed: 0,
        ..TrainRecipe::default()
    };
    let t0 = Instant::now();
    let zoo = zoo_build(&grid, &split.train, &split.test, &recipe, None).unwrap();
    let mean_acc: f64 =
        zoo.manifest.iter().map(|e| e.clean_acc).sum::<f64>() / zoo.manifest.len() as f64;
    println!(
        "zoo: {} victims {:.0}s mean clean {:.3}",
        zoo.victims.len(),
        t0.elapsed().as_secs_f64(),
        mean_acc
    );
    let schema = AttributeSchema::from_grid(&grid).unwrap();
    let eps8 = 8.0 / 255.0;

    // criterion 6: delta-format PGD linf benchmark
    let pgd_train = AttackSpec::defaults(AttackMethod::PgdLinf, eps8, 1111);
    let pgd_test = AttackSpec {
        seed: 2222,
        ..pgd_train.clone()
    };
    let t1 = Instant::now();
    let ds_train = records_to_dataset(
        &zoo,
        &schema,
        &split.train,
        &pgd_train,
        InputFormat::Perturbation,
    );
    let ds_test = records_to_dataset(
        &zoo,
        &schema,
        &split.test,
        &pgd_test,
        InputFormat::Perturbation,
    );
    println!(
        "pgd records: {} train / {} test {:.0}s",
        ds_train.examples.len(),
        ds_test.examples.len(),
        t1.elapsed().as_secs_f64()
    );
    let t2 = Instant::now();
    let mpn = fit_mpn(&schema, &data.shape, &ds_train, 25);
    let rep = evaluate_mpn(&mpn, None, &ds_test).unwrap();
    println!(
        "c6 delta-pgd mpn: weighted {:.3} combined {:.3} {:.0}s",
        rep.weighted,
        rep.combined,
        t2.elapsed().as_secs_f64()
    );

    // criterion 9: same MPN on fgsm vs pgd-l2 test records
    let fgsm = AttackSpec::defaults(AttackMethod::Fgsm, eps8, 3333);
    let pgdl2 = AttackSpec::defaults(AttackMethod::PgdL2, 1.0, 4444);
    let ds_fgsm = records_to_dataset(&zoo, &schema, &split.test, &fgsm, InputFormat::Perturbation);
    let ds_l2 = records_to_dataset(&zoo, &schema, &split.test, &pgdl2, InputFormat::Perturbation);
    let rf = evaluate_mpn(&mpn, None, &ds_fgsm).unwrap();
    let rl = evaluate_mpn(&mpn, None, &ds_l2).unwrap();
    println!("c9 fgsm {:.3} vs pgd-l2 {:.3}", rf.weighted, rl.weighted);

    // criterion 10: strength mismatch
    for (eps, name) in [(4.0 / 255.0, "4/255"), (16.0 / 255.0, "16/255")] {
        let s = AttackSpec {
            eps,
            alpha: redlab_core::attack::spec::default_linf_alpha(eps),
            ..pgd_test.clone()
        };
        let ds = records_to_dataset(&zoo, &schema, &split.test, &s, InputFormat::Perturbation);
        let r = evaluate_mpn(&mpn, None, &ds).unwrap();
        println!(
            "c10 eps {name}: weighted {:.3} (n={})",
            r.weighted,
            ds.examples.len()
        );
    }

    // criterion 8: square-linf benchmark
    let mut sq_train = AttackSpec::defaults(AttackMethod::SquareLinf, eps8, 5555);
    sq_train.max_queries = 1000;
    let sq_test = AttackSpec {
        seed: 6666,
        ..sq_train.clone()
    };
    let t3 = Instant::now();
    let sq_ds_train = records_to_dataset(
        &zoo,
        &schema,
        &split.train,
        &sq_train,
        InputFormat::Perturbation,
    );
    let sq_ds_test = records_to_dataset(
        &zoo,
        &schema,
        &split.test,
        &sq_test,
        InputFormat::Perturbation,
    );
    let sq_mpn = fit_mpn(&schema, &data.shape, &sq_ds_train, 25);
    let rs = evaluate_mpn(&sq_mpn, None, &sq_ds_test).unwrap();
    println!(
        "c8 square mpn: weighted {:.3} (n train {} / test {}) {:.0}s",
        rs.weighted,
        sq_ds_train.examples.len(),
        sq_ds_test.examples.len(),
        t3.elapsed().as_secs_f64()
    );

    // criterion 7 input: adv-example format MPN
    let ds_xadv_train = records_to_dataset(
        &zoo,
        &schema,
        &split.train,
        &pgd_train,
        InputFormat::AdvExample,
    );
    let ds_xadv_test = records_to_dataset(
        &zoo,
        &schema,
        &split.test,
        &pgd_test,
        InputFormat::AdvExample,
    );
    let mpn_x = fit_mpn(&schema, &data.shape, &ds_xadv_train, 25);
    let rx = evaluate_mpn(&mpn_x, None, &ds_xadv_test).unwrap();
    println!("c7 xadv mpn: weighted {:.3}", rx.weighted);
}
