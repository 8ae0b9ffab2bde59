//! Seeded Monte-Carlo checks that use the simulator as ground truth.

use rand::Rng;
use rand_distr::StandardNormal;

use dentres::align::group_frames;
use dentres::audio::ToothId;
use dentres::cepstrum::{QuefrencyPartition, ToothSignature};
use dentres::emd::{emd_with, EmdConfig};
use dentres::pipeline::{measurement_signature, PipelineConfig};
use dentres::rng::rng_for;
use dentres::spectral::Band;
use dentres::stats::{cosine_similarity, l2_norm, mean};
use dentres::synth::{
    make_envelope, perturb_envelope, synthesize, ContactSpec, ExcitationSpec, PerturbMode, SceneSpec,
};

fn scene(seed: u64) -> SceneSpec {
    SceneSpec {
        envelope: make_envelope(4, (2000.0, 16000.0), 15.0, seed).unwrap(),
        excitation: ExcitationSpec {
            seed: seed + 1,
            ..Default::default()
        },
        seed: seed + 2,
        ..Default::default()
    }
}

fn signature(scene: &SceneSpec) -> Vec<f64> {
    let (rec, _) = synthesize(scene).unwrap();
    measurement_signature(&rec, &PipelineConfig::default()).unwrap().values
}

#[test]
fn fundamental_jitter_keeps_signature() {
    for s in 0..5 {
        let base = scene(10 * s);
        let reference = signature(&base);
        for f0 in [247.0, 273.0] {
            let mut moved = base.clone();
            moved.excitation.f0 = f0;
            moved.excitation.seed += 100;
            let cos = cosine_similarity(&reference, &signature(&moved));
            assert!(cos >= 0.9, "scene {s}, f0 {f0}: cosine {cos:.3}");
        }
    }
}

#[test]
fn contact_scale_and_phases_separate_additively() {
    let mut rel = Vec::new();
    for s in 0..5 {
        let mut a = scene(100 + 10 * s);
        a.excitation.jitter_amp = 0.0;
        a.excitation.jitter_f0 = 0.0;
        a.contact.wobble_depth = 0.0;
        a.direct_path_gain = 0.0;
        a.noise_snr_db = None;
        let mut b = a.clone();
        b.excitation.seed += 1000;
        b.contact = ContactSpec {
            strength_scale: 0.3,
            ..a.contact.clone()
        };
        let (sa, sb) = (signature(&a), signature(&b));
        let diff: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| x - y).collect();
        rel.push(l2_norm(&diff) / l2_norm(&sa));
    }
    assert!(rel.iter().all(|&r| r < 0.1), "relative differences {rel:?}");
}

#[test]
fn removed_peak_is_less_similar_than_a_redraw() {
    let mut margins = Vec::new();
    for s in 0..5 {
        let base = scene(200 + 10 * s);
        let reference = signature(&base);
        let mut redraw = base.clone();
        redraw.excitation.seed += 500;
        redraw.seed += 500;
        let mut damaged = redraw.clone();
        damaged.envelope = perturb_envelope(&base.envelope, 1.0, PerturbMode::RemovePeak, s).unwrap();
        let same = cosine_similarity(&reference, &signature(&redraw));
        let other = cosine_similarity(&reference, &signature(&damaged));
        assert!(other < same, "scene {s}: damaged {other:.3} vs redraw {same:.3}");
        margins.push(same - other);
    }
    assert!(mean(&margins) > 0.0);
}

fn zero_crossings(x: &[f64]) -> usize {
    x.windows(2).filter(|w| (w[0] < 0.0) != (w[1] < 0.0)).count()
}

fn extrema(x: &[f64]) -> usize {
    x.windows(3)
        .filter(|w| (w[1] > w[0] && w[1] > w[2]) || (w[1] < w[0] && w[1] < w[2]))
        .count()
}

#[test]
fn imfs_slow_down_with_index() {
    for s in 0..10 {
        let mut rng = rng_for(77, &[s]);
        let base = rng.gen_range(20.0..60.0);
        let tones = [base * 27.0, base * 9.0, base * 3.0, base];
        let x: Vec<f64> = (0..8000)
            .map(|i| {
                let t = i as f64 / 8000.0;
                tones
                    .iter()
                    .enumerate()
                    .map(|(k, f)| (1.0 + k as f64 * 0.3) * (std::f64::consts::TAU * f * t + k as f64).sin())
                    .sum()
            })
            .collect();
        let d = emd_with(&x, &EmdConfig::default()).unwrap();
        let counts: Vec<usize> = d.imfs.iter().map(|imf| zero_crossings(imf)).collect();
        assert!(counts.windows(2).all(|w| w[1] <= w[0]), "signal {s}: crossings {counts:?}");
        // trailing modes with a handful of crossings can tie
        let oscillating: Vec<usize> = counts.iter().copied().filter(|&c| c >= 10).collect();
        assert!(oscillating.len() >= tones.len(), "signal {s}: crossings {counts:?}");
        assert!(oscillating.windows(2).all(|w| w[1] < w[0]), "signal {s}: crossings {counts:?}");
        for (k, imf) in d.imfs.iter().take(3).enumerate() {
            let (e, z) = (extrema(imf) as i64, zero_crossings(imf) as i64);
            assert!((e - z).abs() <= 1, "signal {s}, IMF {}: {e} extrema vs {z} crossings", k + 1);
        }
    }
}

#[test]
fn longer_dwell_lowers_aggregate_noise() {
    let sigma = 1.0;
    let partition = QuefrencyPartition::new(5, 80).unwrap();
    let band = Band::new(2000.0, 16000.0);
    let mut rng = rng_for(3, &[]);
    let (a, b) = (ToothId::new(9).unwrap(), ToothId::new(10).unwrap());
    let counts = [(1usize, 16usize), (4, 4), (16, 1)];
    let mut var_a = vec![0.0; counts.len()];
    let trials = 400;
    for _ in 0..trials {
        for (c, &(na, nb)) in counts.iter().enumerate() {
            let labels: Vec<ToothId> = std::iter::repeat(a).take(na).chain(std::iter::repeat(b).take(nb)).collect();
            let sigs: Vec<ToothSignature> = labels
                .iter()
                .map(|_| ToothSignature {
                    band,
                    partition,
                    values: (0..75).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect(),
                })
                .collect();
            let groups = group_frames(&labels, &sigs).unwrap();
            var_a[c] += groups[&a].values.iter().map(|v| v * v).sum::<f64>() / (75 * trials) as f64;
        }
    }
    for (c, &(na, _)) in counts.iter().enumerate() {
        let expected = sigma * sigma / na as f64;
        assert!((var_a[c] / expected - 1.0).abs() < 0.05, "{na} frames: variance {:.4} vs {expected:.4}", var_a[c]);
    }
}
