use std::fs;

use fedcbmir::data::{load_image, load_manifest, parse_manifest, synth_generate, synth_image, SynthConfig};
use fedcbmir_core::numerics::Tensor;
use fedcbmir_core::{Label, Magnification, Split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> SynthConfig {
    SynthConfig {
        clients: 2,
        train: 6,
        validation: 2,
        test: 2,
        image_size: 16,
        ..SynthConfig::default()
    }
}

fn tree(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth_generate(&small(), a.path()).unwrap();
    synth_generate(&small(), b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
}

#[test]
fn four_clients_have_requested_balanced_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        image_size: 8,
        ..SynthConfig::default()
    };
    let manifests = synth_generate(&cfg, dir.path()).unwrap();
    assert_eq!(manifests.len(), 4);
    for (k, m) in manifests.iter().enumerate() {
        let reread = load_manifest(dir.path().join(format!("client-{k}/manifest.csv"))).unwrap();
        assert_eq!(&reread, m);
        for (split, n) in [(Split::Train, 80), (Split::Validation, 20), (Split::Test, 20)] {
            let recs: Vec<_> = m.split(&[split]).collect();
            assert_eq!(recs.len(), n);
            let malignant = recs.iter().filter(|r| r.label == Label::Malignant).count();
            assert_eq!(malignant * 2, n);
            assert!(recs.iter().all(|r| r.magnification == Some(Magnification::ALL[k])));
        }
    }
    let all = load_manifest(dir.path().join("manifest.csv")).unwrap();
    assert_eq!(all.records.len(), 480);
    let first = &all.records[0];
    assert_eq!(load_image(&first.path).unwrap().shape(), &[3, 8, 8]);
}

#[test]
fn forty_x_row_stats_match_reference_counts() {
    let mut csv = String::from("id,path,label,magnification,center,split\n");
    for i in 0..1995 {
        let label = if i < 625 { "benign" } else { "malignant" };
        csv.push_str(&format!("p{i},p{i}.png,{label},40x,ufpr,train\n"));
    }
    let m = parse_manifest(csv.as_bytes(), std::path::Path::new("."), std::path::Path::new("t.csv")).unwrap();
    assert_eq!(m.stats.label(Label::Benign), 625);
    assert_eq!(m.stats.label(Label::Malignant), 1370);
    assert_eq!(m.stats.total, 1995);
    assert_eq!(m.stats.cells["malignant/40x/train"], 1370);
}

fn gray(t: &Tensor<f32>) -> Vec<f64> {
    let n = t.shape()[1] * t.shape()[2];
    (0..n).map(|p| (0..3).map(|c| t.data()[c * n + p] as f64).sum::<f64>() / 3.0).collect()
}

/// Radius (cycles per image) of the strongest non-DC component of a naive 2-D DFT.
fn dominant_radius(img: &[f64], n: usize) -> f64 {
    let mean = img.iter().sum::<f64>() / img.len() as f64;
    let mut best = (0.0, 0.0);
    let half = n as i64 / 2;
    for ky in -half..half {
        for kx in 0..half {
            if kx == 0 && ky == 0 {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..n {
                for x in 0..n {
                    let phase = -std::f64::consts::TAU * (kx as f64 * x as f64 + ky as f64 * y as f64) / n as f64;
                    let v = img[y * n + x] - mean;
                    re += v * phase.cos();
                    im += v * phase.sin();
                }
            }
            let mag = re * re + im * im;
            if mag > best.0 {
                best = (mag, ((kx * kx + ky * ky) as f64).sqrt());
            }
        }
    }
    best.1
}

#[test]
fn stripe_wavelength_follows_scale_factor() {
    let cfg = SynthConfig {
        image_size: 48,
        noise_sigma: 0.0,
        ..SynthConfig::default()
    };
    let n = cfg.image_size;
    let wavelength = |scale: f64| {
        let mut total = 0.0;
        for s in 0..4 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + s);
            let img = synth_image(&cfg, Label::Malignant, scale, &mut rng);
            total += n as f64 / dominant_radius(&gray(&img), n);
        }
        total / 4.0
    };
    let (w40, w400) = (wavelength(cfg.scales[0]), wavelength(cfg.scales[3]));
    let expected = cfg.scales[3] / cfg.scales[0];
    assert!((w40 - cfg.stripe_wavelength).abs() / cfg.stripe_wavelength < 0.1, "{w40}");
    assert!(((w400 / w40) - expected).abs() / expected < 0.1, "{w400} / {w40}");
}

#[test]
fn classes_separate_on_mean_and_variance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        train: 40,
        validation: 0,
        test: 40,
        ..SynthConfig::default()
    };
    let manifests = synth_generate(&cfg, dir.path()).unwrap();
    let stats = |path: &std::path::Path| {
        let g = gray(&load_image(path).unwrap());
        let m = g.iter().sum::<f64>() / g.len() as f64;
        let v = g.iter().map(|x| (x - m).powi(2)).sum::<f64>() / g.len() as f64;
        (m, v)
    };
    for m in &manifests {
        let train: Vec<_> = m.split(&[Split::Train]).map(|r| (stats(&r.path), r.label.is_positive())).collect();
        let centroid = |pos: bool| {
            let xs: Vec<_> = train.iter().filter(|(_, p)| *p == pos).map(|(s, _)| *s).collect();
            let k = xs.len() as f64;
            (xs.iter().map(|s| s.0).sum::<f64>() / k, xs.iter().map(|s| s.1).sum::<f64>() / k)
        };
        let (cp, cn) = (centroid(true), centroid(false));
        let d = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
        let test: Vec<_> = m.split(&[Split::Test]).collect();
        let correct = test
            .iter()
            .filter(|r| {
                let s = stats(&r.path);
                (d(s, cp) < d(s, cn)) == r.label.is_positive()
            })
            .count();
        assert!(correct as f64 / test.len() as f64 > 0.9);
    }
}

mod manifest_roundtrip {
    use fedcbmir::data::{load_manifest, write_manifest, ImageRecord};
    use fedcbmir_core::{Label, Magnification, Split};
    use proptest::prelude::*;

    fn record() -> impl Strategy<Value = ImageRecord> {
        (
            "[a-z][a-z0-9_-]{0,12}",
            prop::sample::select(vec![Label::Benign, Label::Malignant, Label::NonCancerous, Label::Cancerous]),
            prop::option::of(prop::sample::select(Magnification::ALL.to_vec())),
            // Fields are trimmed on load, so centres never carry edge whitespace.
            "([A-Za-z,\"]{1,4}( [A-Za-z,\"]{1,4})?)?",
            prop::sample::select(vec![Split::Train, Split::Validation, Split::Test]),
        )
            .prop_map(|(id, label, magnification, center, split)| ImageRecord {
                path: std::path::PathBuf::from(format!("img/{id}.png")),
                id,
                label,
                magnification,
                center,
                split,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn write_then_load_is_identity(records in prop::collection::vec(record(), 1..20)) {
            let mut seen = std::collections::HashSet::new();
            let records: Vec<ImageRecord> = records.into_iter().filter(|r| seen.insert(r.id.clone())).collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.csv");
            write_manifest(&path, &records).unwrap();
            let back = load_manifest(&path).unwrap();
            let expected: Vec<ImageRecord> = records
                .iter()
                .map(|r| ImageRecord { path: dir.path().join(&r.path), ..r.clone() })
                .collect();
            prop_assert_eq!(back.records, expected);
        }
    }
}
