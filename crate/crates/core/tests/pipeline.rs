//! End-to-end CLI pipeline: generate a synthetic world, then drive every
//! subcommand over its outputs and check the stages chain together and rerun
//! byte-identically.

use std::fs;
use std::path::Path;

use geoactivity::cli::dispatch;

fn run(parts: &[&str]) -> i32 {
    dispatch(parts.iter().map(|s| s.to_string()))
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn every_stage_chains_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let spec = root.join("world.spec");
    fs::write(&spec, "users 60\ndays 6\nseed 5\nworld_cells 12\n").unwrap();
    let world = root.join("world");
    assert_eq!(
        run(&["synth", "generate", "--spec", &s(&spec), "--out", &s(&world)]),
        0
    );
    let corpus = world.join("corpus.jsonl");
    for name in ["corpus.jsonl", "outlets.csv", "manifest.json", "keywords.txt"] {
        assert!(world.join(name).exists(), "missing {name}");
    }

    let homes = root.join("homes.csv");
    assert_eq!(
        run(&[
            "ingest",
            "--in",
            &s(&corpus),
            "--homes-out",
            &s(&homes),
        ]),
        0
    );
    let homes_body = fs::read_to_string(&homes).unwrap();
    assert!(homes_body.starts_with("user,cell\n"));
    assert!(homes_body.lines().count() > 50);

    let model_dir = root.join("cascade");
    assert_eq!(
        run(&[
            "train-activity",
            "--labels",
            &s(&corpus),
            "--keywords",
            &s(&world.join("keywords.txt")),
            "--out",
            &s(&model_dir),
        ]),
        0
    );
    for name in ["svm1.model", "svm2.model", "svm3.model", "vocab1.tsv", "keywords.txt"] {
        assert!(model_dir.join(name).exists(), "missing {name}");
    }

    let labeled = root.join("labeled.jsonl");
    assert_eq!(
        run(&[
            "classify",
            "--model",
            &s(&model_dir),
            "--in",
            &s(&corpus),
            "--out",
            &s(&labeled),
        ]),
        0
    );
    let labeled_body = fs::read_to_string(&labeled).unwrap();
    assert_eq!(
        labeled_body.lines().count(),
        fs::read_to_string(&corpus).unwrap().lines().count()
    );
    assert!(labeled_body.lines().all(|l| l.contains("\"label\":")));

    let feats = root.join("features.csv");
    assert_eq!(
        run(&[
            "extract-features",
            "--in",
            &s(&corpus),
            "--out",
            &s(&feats),
        ]),
        0
    );
    assert!(fs::read_to_string(&feats).unwrap().starts_with("user,cell,f1"));

    let home_model = root.join("home.model");
    assert_eq!(
        run(&[
            "train-home",
            "--features",
            &s(&feats),
            "--homes",
            &s(&homes),
            "--out",
            &s(&home_model),
        ]),
        0
    );

    let preds = root.join("preds.csv");
    assert_eq!(
        run(&[
            "infer-home",
            "--model",
            &s(&home_model),
            "--in",
            &s(&feats),
            "--out",
            &s(&preds),
        ]),
        0
    );
    let preds_body = fs::read_to_string(&preds).unwrap();
    assert!(preds_body.starts_with("user,cell,score,lat,lon\n"));
    // The default threshold of negative infinity covers everyone.
    assert!(!preds_body.contains("UNKNOWN"));

    let curve = root.join("curve.csv");
    assert_eq!(
        run(&[
            "home-curve",
            "--model",
            &s(&home_model),
            "--features",
            &s(&feats),
            "--homes",
            &s(&homes),
            "--out",
            &s(&curve),
        ]),
        0
    );
    let curve_body = fs::read_to_string(&curve).unwrap();
    assert!(curve_body.starts_with("threshold,coverage,accuracy\n"));
    let last = curve_body.lines().last().unwrap();
    assert!(last.split(',').nth(1).unwrap() == "1", "full-coverage tail: {last}");

    let heat = root.join("heat");
    assert_eq!(
        run(&[
            "analyze",
            "heatmap",
            "--in",
            &s(&labeled),
            "--out",
            &s(&heat),
            "--min-pos",
            "2",
        ]),
        0
    );
    assert!(root.join("heat.geojson").exists());
    assert!(root.join("heat.csv").exists());

    assert_eq!(
        run(&[
            "analyze",
            "correlate",
            "--in",
            &s(&labeled),
            "--outlets",
            &s(&world.join("outlets.csv")),
            "--permutations",
            "200",
        ]),
        0
    );

    let dist = root.join("dist.csv");
    assert_eq!(
        run(&[
            "analyze",
            "distances",
            "--in",
            &s(&labeled),
            "--homes",
            &s(&preds),
            "--out",
            &s(&dist),
        ]),
        0
    );
    let dist_body = fs::read_to_string(&dist).unwrap();
    assert!(dist_body.starts_with("lo_m,hi_m,count\n"));
    assert_eq!(dist_body.lines().count(), 8);

    let sweep = root.join("sweep.csv");
    assert_eq!(
        run(&[
            "home-sweep",
            "--in",
            &s(&corpus),
            "--sizes",
            "100,250",
            "--out",
            &s(&sweep),
        ]),
        0
    );
    let sweep_body = fs::read_to_string(&sweep).unwrap();
    assert!(sweep_body.starts_with("cell_size_m,resolution_m,threshold,coverage,accuracy\n"));
    assert_eq!(sweep_body.lines().count(), 3);

    // Reruns with the same inputs and seed are byte-identical.
    let world2 = root.join("world2");
    assert_eq!(
        run(&["synth", "generate", "--spec", &s(&spec), "--out", &s(&world2)]),
        0
    );
    assert_eq!(
        fs::read(&corpus).unwrap(),
        fs::read(world2.join("corpus.jsonl")).unwrap()
    );

    let labeled2 = root.join("labeled2.jsonl");
    assert_eq!(
        run(&[
            "classify",
            "--model",
            &s(&model_dir),
            "--in",
            &s(&corpus),
            "--out",
            &s(&labeled2),
        ]),
        0
    );
    assert_eq!(fs::read(&labeled).unwrap(), fs::read(&labeled2).unwrap());

    let feats2 = root.join("features2.csv");
    assert_eq!(
        run(&[
            "extract-features",
            "--in",
            &s(&corpus),
            "--out",
            &s(&feats2),
        ]),
        0
    );
    assert_eq!(fs::read(&feats).unwrap(), fs::read(&feats2).unwrap());
}

#[test]
fn classify_without_a_model_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("x.jsonl");
    fs::write(
        &corpus,
        "{\"user\":\"a\",\"ts\":0,\"tz_offset_min\":0,\"lat\":40.7,\"lon\":-74.0,\"text\":\"hi\"}\n",
    )
    .unwrap();
    let code = run(&[
        "classify",
        "--model",
        dir.path().join("nope").to_str().unwrap(),
        "--in",
        corpus.to_str().unwrap(),
        "--out",
        dir.path().join("out.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}
