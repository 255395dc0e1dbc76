//! End-to-end: canonicalize a dataset, fit priors, train, checkpoint, sample,
//! randomize, and write the samples back out.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use symcanon::canonicalizer::{canonicalize, GroupChoice};
use symcanon::flow::net::CanonLiteConfig;
use symcanon::flow::train::{train, FlowModel, TrainConfig};
use symcanon::molecule::{fingerprint, parse_xyz, write_xyz, MoleculeState, Vocab};
use symcanon::priors::MolecularPrior;
use symcanon::sampler::{sample, Regime, SampleConfig};
use symcanon::toy::random_alkane;

fn trained_model() -> FlowModel {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let reps: Vec<_> = (0..8)
        .map(|_| {
            canonicalize(&random_alkane(2, &mut rng), GroupChoice::PermSo3)
                .unwrap()
                .representative
        })
        .collect();
    let vocab = Vocab::default();
    let prior = MolecularPrior::fit(&reps, &vocab, 4).unwrap();
    let data: Vec<_> = reps.iter().map(|m| vocab.encode(m).unwrap()).collect();
    let net = CanonLiteConfig {
        max_atoms: 12,
        ..CanonLiteConfig::tiny(vocab.n_types(), vocab.n_charges())
    };
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        seed: 2,
        ..TrainConfig::default()
    };
    train(&data, &data[..2], net, &prior, &vocab, &cfg).unwrap().0
}

fn sorted_distances(m: &MoleculeState) -> Vec<f64> {
    let n = m.n_atoms();
    let mut d: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| m.distance(i, j))
        .collect();
    d.sort_by(f64::total_cmp);
    d
}

fn sorted_types(m: &MoleculeState) -> Vec<u8> {
    let mut t = m.atom_types.clone();
    t.sort_unstable();
    t
}

#[test]
fn checkpoint_reload_reproduces_samples() {
    let model = trained_model();
    let reloaded = FlowModel::from_json(&model.to_json().unwrap()).unwrap();
    let cfg = SampleConfig {
        steps: 6,
        seed: 4,
        ..SampleConfig::default()
    };
    let sizes = [5, 8, 11];
    let (a, _) = sample(&model, &sizes, &cfg).unwrap();
    let (b, _) = sample(&reloaded, &sizes, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn haar_output_is_a_group_image_of_the_slice_sample() {
    let model = trained_model();
    let sizes = [6, 9];
    for regime in [Regime::A, Regime::B] {
        let base = SampleConfig {
            steps: 5,
            regime,
            seed: 8,
            haar: false,
            ..SampleConfig::default()
        };
        let (plain, _) = sample(&model, &sizes, &base).unwrap();
        let (moved, _) = sample(&model, &sizes, &SampleConfig { haar: true, ..base }).unwrap();
        for (p, m) in plain.iter().zip(&moved) {
            assert_eq!(sorted_types(p), sorted_types(m));
            assert_eq!(fingerprint(p), fingerprint(m));
            let (dp, dm) = (sorted_distances(p), sorted_distances(m));
            let worst = dp.iter().zip(&dm).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-9, "{regime:?}: distance mismatch {worst:e}");
        }
    }
}

#[test]
fn samples_survive_an_xyz_round_trip() {
    let model = trained_model();
    let cfg = SampleConfig {
        steps: 4,
        seed: 1,
        ..SampleConfig::default()
    };
    let (mols, _) = sample(&model, &[7, 7], &cfg).unwrap();
    for m in &mols {
        let back = parse_xyz(&write_xyz(m, "sample")).unwrap();
        assert_eq!(back.atom_types, m.atom_types);
        for (x, y) in back.coords.iter().zip(&m.coords) {
            for k in 0..3 {
                assert!((x[k] - y[k]).abs() <= 1e-9);
            }
        }
    }
}
