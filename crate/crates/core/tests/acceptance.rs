//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the lines always print.

use std::fs;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use dentres::audio::{Condition, ToothId};
use dentres::bench::{run_detection_benchmark, DetectionBenchConfig};
use dentres::cepstrum::{slice_energy, QuefrencySlice};
use dentres::commands::{cmd_eval, BenchmarkSpec};
use dentres::detect::{fit_profile, log_likelihood, roc_auc};
use dentres::emd::{emd_with, EmdConfig};
use dentres::features::{select_range, FeatureRange};
use dentres::align::{dtw, FrameSequence};
use dentres::pipeline::{
    frame_cepstra, mean_cepstrum, measurement_signature, preprocess, slice_reconstruction,
    PipelineConfig,
};
use dentres::rng::rng_for;
use dentres::stats::{cosine_similarity, l2_norm, mean, pearson};
use dentres::synth::{
    make_envelope, synthesize, ContactSpec, ExcitationSpec, PerturbMode, SceneSpec,
};

const BAND: (f64, f64) = (2000.0, 16000.0);
const N_PEAKS: usize = 4;
const PEAK_GAIN_DB: f64 = 15.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_emd_completeness() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for s in 0..200u64 {
        let mut rng = rng_for(0xe3d, &[s]);
        let n = rng.gen_range(1000..=44100);
        let n_tones = rng.gen_range(1..=4);
        let tones: Vec<(f64, f64, f64)> = (0..n_tones)
            .map(|_| {
                (
                    rng.gen_range(0.1..1.0),
                    rng.gen_range(20.0..15000.0),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let noise = rng.gen_range(0.0..0.5);
        let trend = rng.gen_range(-1.0..1.0);
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / 44100.0;
                let v: f64 = tones.iter().map(|(a, f, p)| a * (std::f64::consts::TAU * f * t + p).sin()).sum();
                v + trend * t + noise * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let d = emd_with(&x, &EmdConfig::default()).expect("emd");
        let r = d.reconstruct();
        let err: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a - b).collect();
        worst = worst.max(l2_norm(&err) / l2_norm(&x));
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-6 && secs < 60.0,
        format!("200 signals, worst relative L2 error {worst:.2e} (<= 1e-6), {secs:.1} s (< 60 s)"),
    )
}

fn c2_cepstral_separation() -> Outcome {
    let cfg = PipelineConfig::default();
    let mut rs = Vec::new();
    for s in 0..50u64 {
        let env = make_envelope(N_PEAKS, BAND, PEAK_GAIN_DB, 1000 + s).unwrap();
        let scene = SceneSpec {
            envelope: env.clone(),
            excitation: ExcitationSpec {
                seed: 2000 + s,
                ..Default::default()
            },
            seed: 3000 + s,
            ..Default::default()
        };
        let (rec, _) = synthesize(&scene).unwrap();
        let (freqs, mid) = slice_reconstruction(&rec, &cfg, QuefrencySlice::Mid).unwrap();
        rs.push(pearson(&mid, &env.log_gains(&freqs)));
    }
    let m = mean(&rs);
    let lo = rs.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        m >= 0.85 && lo >= 0.75,
        format!("50 scenes, Pearson mean {m:.3} (>= 0.85), min {lo:.3} (>= 0.75)"),
    )
}

fn strength_pair(s: u64, direct_path_gain: f64) -> (f64, f64) {
    let cfg = PipelineConfig::default();
    let env = make_envelope(N_PEAKS, BAND, PEAK_GAIN_DB, 4000 + s).unwrap();
    let scene = |strength: f64, seed: u64| SceneSpec {
        envelope: env.clone(),
        excitation: ExcitationSpec {
            seed,
            ..Default::default()
        },
        contact: ContactSpec {
            strength_scale: strength,
            ..Default::default()
        },
        direct_path_gain,
        seed,
        ..Default::default()
    };
    let (strong, _) = synthesize(&scene(1.0, 5000 + 2 * s)).unwrap();
    let (weak, _) = synthesize(&scene(0.1, 5001 + 2 * s)).unwrap();
    let cos = cosine_similarity(
        &measurement_signature(&strong, &cfg).unwrap().values,
        &measurement_signature(&weak, &cfg).unwrap().values,
    );
    let low = |rec| {
        let cep = mean_cepstrum(&frame_cepstra(&preprocess(rec, &cfg).unwrap(), &cfg).unwrap()).unwrap();
        slice_energy(&cep, QuefrencySlice::Low, cfg.partition)
    };
    let (a, b) = (low(&strong), low(&weak));
    (cos, a.max(b) / a.min(b))
}

fn c3_strength_robustness() -> Outcome {
    let pairs: Vec<(f64, f64)> = (0..20).map(|s| strength_pair(s, 0.0)).collect();
    let min_cos = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let min_ratio = pairs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let with_direct: Vec<f64> = (0..20).map(|s| strength_pair(s, 0.5).0).collect();
    outcome(
        min_cos >= 0.9 && min_ratio >= 5.0,
        format!(
            "20 scenes (direct path off), min cosine {min_cos:.3} (>= 0.9), min low-slice energy ratio {min_ratio:.2} (>= 5); \
             with direct path 0.5 the min cosine is {:.3}",
            with_direct.iter().copied().fold(f64::INFINITY, f64::min)
        ),
    )
}

fn c4_detection(summary: &dentres::commands::EvalSummary) -> Outcome {
    let caries = summary
        .detection
        .iter()
        .find(|s| s.condition == Condition::Caries)
        .expect("bundled benchmark includes caries");
    let auc1 = caries.mean_auc[0];
    outcome(
        auc1 >= 0.90 && caries.monotone_scenarios >= 45,
        format!(
            "caries (peak removal), mean AUC k=1/3/5 {:.3}/{:.3}/{:.3} (k=1 >= 0.90), monotone in {}/50 scenarios (>= 45)",
            caries.mean_auc[0], caries.mean_auc[1], caries.mean_auc[2], caries.monotone_scenarios
        ),
    )
}

fn c5_denoise_ablation() -> Outcome {
    let bench = DetectionBenchConfig {
        n_scenarios: 20,
        modes: vec![PerturbMode::ShiftPeak],
        snr_db: Some(5.0),
        direct_path_gain: 0.5,
        ks: vec![1],
        seed: 2024,
        ..Default::default()
    };
    let auc = |skip_denoise| {
        let cfg = PipelineConfig {
            skip_denoise,
            ..Default::default()
        };
        run_detection_benchmark(&bench, &cfg).unwrap().summaries[0].mean_auc[0]
    };
    let (with, without) = (auc(false), auc(true));
    outcome(
        with - without >= 0.03,
        format!(
            "calculus (peak shift) at 5 dB, 20 scenarios: AUC {with:.3} with denoise vs {without:.3} without, gain {:.3} (>= 0.03)",
            with - without
        ),
    )
}

fn c6_alignment(summary: &dentres::commands::EvalSummary) -> Outcome {
    let a = summary.alignment.as_ref().expect("bundled benchmark includes alignment");
    outcome(
        a.dtw_wins >= 45 && a.mean_dtw.mean_abs_tooth_error < a.mean_baseline.mean_abs_tooth_error,
        format!(
            "DTW beats uniform baseline in {}/{} (>= 45); accuracy {:.3} vs {:.3}; tooth error {:.3} vs {:.3}",
            a.dtw_wins,
            a.n_scenarios,
            a.mean_dtw.accuracy,
            a.mean_baseline.accuracy,
            a.mean_dtw.mean_abs_tooth_error,
            a.mean_baseline.mean_abs_tooth_error
        ),
    )
}

fn exhaustive_range(g: &[f64], alpha: f64) -> (usize, usize) {
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for i in 0..g.len() {
        for j in i..g.len() {
            let s: f64 = g[i..=j].iter().map(|v| v - alpha).sum();
            if s > best.0 {
                best = (s, i, j);
            }
        }
    }
    (best.1, best.2)
}

fn brute_dtw(a: &[Vec<f64>], b: &[Vec<f64>], i: usize, j: usize) -> f64 {
    let d: f64 = a[i].iter().zip(&b[j]).map(|(x, y)| (x - y).powi(2)).sum();
    if i == 0 && j == 0 {
        return d;
    }
    let mut best = f64::INFINITY;
    if i > 0 {
        best = best.min(brute_dtw(a, b, i - 1, j));
    }
    if j > 0 {
        best = best.min(brute_dtw(a, b, i, j - 1));
    }
    if i > 0 && j > 0 {
        best = best.min(brute_dtw(a, b, i - 1, j - 1));
    }
    d + best
}

fn mann_whitney(h: &[f64], u: &[f64]) -> f64 {
    let mut s = 0.0;
    for &x in h {
        for &y in u {
            if y < x {
                s += 1.0;
            } else if y == x {
                s += 0.5;
            }
        }
    }
    s / (h.len() * u.len()) as f64
}

fn c7_oracles() -> Outcome {
    let mut rng = rng_for(0x07ac1e, &[]);
    let mut range_miss = 0;
    for i in 0..1000 {
        let n = rng.gen_range(1..=30);
        let g: Vec<f64> = (0..n)
            .map(|_| {
                if i % 2 == 0 {
                    rng.gen_range(0..=12) as f64 / 4.0
                } else {
                    rng.gen_range(0.0..3.0)
                }
            })
            .collect();
        let alpha = [0.5, 1.0, 1.25, 2.0][i % 4];
        let r = select_range(&g, alpha).unwrap();
        if (r.start, r.end) != exhaustive_range(&g, alpha) {
            range_miss += 1;
        }
    }
    let mut dtw_miss = 0;
    let mut dtw_cases = 0;
    for m in 1..=6 {
        for n in 1..=6 {
            for _ in 0..5 {
                let seq = |len: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
                    (0..len).map(|_| vec![rng.gen_range(-2..=2) as f64, rng.gen_range(-1.0..1.0)]).collect()
                };
                let a = seq(m, &mut rng);
                let b = seq(n, &mut rng);
                let path = dtw(
                    &FrameSequence::new(a.clone(), None).unwrap(),
                    &FrameSequence::new(b.clone(), None).unwrap(),
                    None,
                )
                .unwrap();
                dtw_cases += 1;
                if (path.total_cost - brute_dtw(&a, &b, m - 1, n - 1)).abs() > 1e-9 {
                    dtw_miss += 1;
                }
            }
        }
    }
    let mut auc_miss = 0;
    for i in 0..500 {
        let nh = rng.gen_range(1..=25);
        let nu = rng.gen_range(1..=25);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
            if i % 2 == 0 {
                rng.gen_range(-3..=3) as f64
            } else {
                rng.gen_range(-3.0..3.0)
            }
        };
        let h: Vec<f64> = (0..nh).map(|_| draw(&mut rng)).collect();
        let u: Vec<f64> = (0..nu).map(|_| draw(&mut rng)).collect();
        if (roc_auc(&h, &u, 0, 0).unwrap().auc - mann_whitney(&h, &u)).abs() > 1e-12 {
            auc_miss += 1;
        }
    }
    outcome(
        range_miss + dtw_miss + auc_miss == 0,
        format!(
            "mismatches: select_range {range_miss}/1000, DTW {dtw_miss}/{dtw_cases} (m,n <= 6), AUC {auc_miss}/500"
        ),
    )
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fb: f64, fc: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let c = 0.5 * (a + b);
        let (l, r) = (0.5 * (a + c), 0.5 * (c + b));
        let (fl, fr) = (f(l), f(r));
        let left = (c - a) / 6.0 * (fa + 4.0 * fl + fc);
        let right = (b - c) / 6.0 * (fc + 4.0 * fr + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, c, fa, fc, fl, left, tol / 2.0, depth - 1) + rec(f, c, b, fc, fb, fr, right, tol / 2.0, depth - 1)
    }
    rec(f, a, b, fa, fb, fc, whole, tol, depth)
}

fn c8_kde() -> Outcome {
    let tooth = ToothId::new(1).unwrap();
    let refs: Vec<Vec<f64>> = vec![vec![0.3], vec![1.7], vec![2.2], vec![-0.4], vec![5.0]];
    let p = fit_profile(&refs, None, FeatureRange::full(1).unwrap(), tooth, Condition::Caries).unwrap();
    // density is defined on normalized coordinates; dx = std * dz
    let f = |x: f64| log_likelihood(&p, &[x]).unwrap().log_likelihood.exp() / p.norm_std[0];
    let span = 10.0 * p.h * p.norm_std[0];
    let integral = adaptive_simpson(&f, -0.4 - span, 5.0 + span, 1e-10, 40);

    let single = fit_profile(&[vec![0.0]], Some(1.0), FeatureRange::full(1).unwrap(), tooth, Condition::Caries).unwrap();
    let one = log_likelihood(&single, &[0.0]).unwrap().log_likelihood;
    let one_expected = -0.5 * (2.0 * std::f64::consts::PI).ln();
    let pair = fit_profile(&[vec![-1.0], vec![1.0]], Some(1.0), FeatureRange::full(1).unwrap(), tooth, Condition::Caries).unwrap();
    let two = log_likelihood(&pair, &[0.0]).unwrap().log_likelihood.exp();
    let two_expected = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let (e1, e2) = ((one - one_expected).abs(), (two - two_expected).abs());
    outcome(
        (integral - 1.0).abs() <= 1e-3 && e1 <= 1e-9 && e2 <= 1e-9,
        format!(
            "1-D density integral {integral:.6} (|.-1| <= 1e-3); single-reference log f {one:.6} (err {e1:.1e}); two-reference f {two:.6} (err {e2:.1e})"
        ),
    )
}

fn c9_determinism(first: &std::path::Path, second: &std::path::Path, secs: f64) -> Outcome {
    let files = ["auc.csv", "roc.csv", "alignment.csv"];
    let same = files
        .iter()
        .all(|f| fs::read(first.join(f)).unwrap() == fs::read(second.join(f)).unwrap());
    outcome(
        same && secs < 600.0,
        format!("bundled benchmark run twice: CSVs byte-identical = {same}; one run took {secs:.0} s (< 600 s)"),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = BenchmarkSpec::bundled();
    let t = Instant::now();
    let summary = cmd_eval(&spec, &dir.path().join("run1")).expect("eval run 1");
    let eval_secs = t.elapsed().as_secs_f64();
    cmd_eval(&spec, &dir.path().join("run2")).expect("eval run 2");

    let results = [
        ("EMD completeness", c1_emd_completeness()),
        ("cepstral separation", c2_cepstral_separation()),
        ("strength robustness", c3_strength_robustness()),
        ("detection benchmark", c4_detection(&summary)),
        ("noise-suppression ablation", c5_denoise_ablation()),
        ("alignment", c6_alignment(&summary)),
        ("oracle equivalences", c7_oracles()),
        ("KDE correctness", c8_kde()),
        ("determinism", c9_determinism(&dir.path().join("run1"), &dir.path().join("run2"), eval_secs)),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!(
            "criterion {} [{}] {name}: {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
