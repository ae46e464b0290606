use feathernet::files::{load_weights, read_scores, save_weights, write_scores, FileError, ScoreRow};
use feathernet::manifest::{Manifest, ManifestError};
use feathernet::pgm::{read_pgm, write_pgm, PgmError};
use feathernet_core::arch::{HeadKind, Variant};
use feathernet_core::image::{GrayImage, Label};
use feathernet_core::model::build_feathernet;
use feathernet_core::synth::synthesize_sample;
use feathernet_core::weights::WeightsError;

#[test]
fn pgm_file_round_trip_at_model_size() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("face.pgm");
    let img = synthesize_sample(Label::Real, 5).image;
    write_pgm(&img, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"P5\n224 224\n255\n"));
    assert_eq!(bytes.len(), 15 + 224 * 224);
    assert_eq!(read_pgm(&path).unwrap(), img);
    assert!(matches!(read_pgm(&dir.path().join("nope.pgm")), Err(PgmError::Io { .. })));
}

#[test]
fn weights_file_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.fthn");
    let b = dir.path().join("b.fthn");
    let model = build_feathernet::<f32>(Variant::A, HeadKind::GapLinear2, 3).unwrap();
    save_weights(&model, &a).unwrap();
    let loaded = load_weights(&a).unwrap();
    assert_eq!(loaded, model);
    save_weights(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let bytes = std::fs::read(&a).unwrap();
    std::fs::write(&b, &bytes[..bytes.len() / 2]).unwrap();
    let e = load_weights(&b).unwrap_err();
    assert!(matches!(e, FileError::Weights { source: WeightsError::Truncated(_), .. }), "{e}");
    assert!(e.to_string().contains("truncated"));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&b, &bad).unwrap();
    let e = load_weights(&b).unwrap_err();
    assert!(matches!(e, FileError::Weights { source: WeightsError::BadMagic, .. }));
    assert!(e.to_string().contains("bad magic"));

    let mut bad = bytes;
    bad[4] = 9;
    std::fs::write(&b, &bad).unwrap();
    assert!(matches!(load_weights(&b), Err(FileError::Weights { source: WeightsError::UnsupportedVersion(9), .. })));
}

#[test]
fn manifest_checks_paths_on_read() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("img")).unwrap();
    write_pgm(&GrayImage::blank(2, 2), &dir.path().join("img/a.pgm")).unwrap();
    let m = dir.path().join("m.csv");
    std::fs::write(&m, "path,label,modality\nimg/a.pgm,real,depth\n").unwrap();
    let manifest = Manifest::read(&m).unwrap();
    assert_eq!(manifest.load_samples().unwrap()[0].image, GrayImage::blank(2, 2));

    std::fs::write(&m, "path,label,modality\nimg/a.pgm,1,depth\nimg/b.pgm,0,depth\n").unwrap();
    let e = Manifest::read(&m).unwrap_err();
    assert!(matches!(e, ManifestError::Missing { line: 3, .. }), "{e}");
}

#[test]
fn scores_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    let rows = vec![
        ScoreRow { path: "a.pgm".into(), score: 0.1 + 0.2, label: Label::Fake },
        ScoreRow { path: "dir, with comma/b.pgm".into(), score: 1.0, label: Label::Real },
    ];
    write_scores(&rows, &p).unwrap();
    assert_eq!(read_scores(&p).unwrap(), rows);
    std::fs::write(&p, "path,score,label\na,high,1\n").unwrap();
    assert!(matches!(read_scores(&p), Err(FileError::Table { line: 2, .. })));
}
