//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use pucl::cli::{run_pipeline, RunConfig};
use pucl::suites::{run_suite, Suite, SuiteOptions, SuiteReport};
use std::time::Instant;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn suite(s: Suite) -> SuiteReport {
    run_suite(s, &SuiteOptions { seed: 0, trials: None }).unwrap_or_else(|e| panic!("suite {} failed to run: {e}", s.name()))
}

fn checks_pass(r: &SuiteReport, names: &[&str]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in names {
        match r.check(n) {
            Some(c) => {
                ok &= c.passed;
                parts.push(format!("{n}={}", if c.passed { "ok" } else { "FAILED" }));
            }
            None => {
                ok = false;
                parts.push(format!("{n}=missing"));
            }
        }
    }
    (ok, parts.join(" "))
}

fn from_suite(name: &'static str, r: &SuiteReport, checks: &[&str], limit_secs: Option<f64>) -> Outcome {
    let (mut passed, mut detail) = checks_pass(r, checks);
    if let Some(l) = limit_secs {
        passed &= r.elapsed_secs < l;
        detail.push_str(&format!(" time={:.2}s (limit {l}s)", r.elapsed_secs));
    } else {
        detail.push_str(&format!(" time={:.2}s", r.elapsed_secs));
    }
    Outcome { name, passed, detail }
}

fn pipeline() -> Outcome {
    let start = Instant::now();
    let accs: Vec<f64> = (0..5u64)
        .map(|s| run_pipeline(&RunConfig::gmm_preset(s)).expect("pipeline run").metrics.test.accuracy)
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let passed = accs.iter().all(|&a| a >= 0.95) && secs < 180.0;
    let list: Vec<String> = accs.iter().map(|a| format!("{a:.4}")).collect();
    Outcome { name: "end_to_end_pipeline", passed, detail: format!("accuracy [{}] >= 0.95, time={secs:.1}s (limit 180s)", list.join(", ")) }
}

fn ablation() -> Outcome {
    let mean_acc = |loss: &str, gamma: f64| -> f64 {
        let accs: Vec<f64> = (0..5u64)
            .map(|s| {
                let mut cfg = RunConfig::hard_preset(s);
                cfg.train.loss = loss.into();
                cfg.data.gamma = gamma;
                run_pipeline(&cfg).expect("pipeline run").metrics.test.accuracy
            })
            .collect();
        accs.iter().sum::<f64>() / accs.len() as f64
    };
    let pucl_lo = mean_acc("pucl", 0.01);
    let sclpu_lo = mean_acc("scl_pu", 0.01);
    let sclpu_hi = mean_acc("scl_pu", 0.5);
    let pucl_hi = mean_acc("pucl", 0.5);
    let sscl_hi = mean_acc("sscl", 0.5);
    let a = pucl_lo >= sclpu_lo;
    let b = sclpu_hi >= sclpu_lo;
    let c = pucl_hi >= sscl_hi;
    Outcome {
        name: "ablation_trends",
        passed: a && b && c,
        detail: format!(
            "pucl(0.01)={pucl_lo:.4} >= scl_pu(0.01)={sclpu_lo:.4}: {a}; scl_pu(0.5)={sclpu_hi:.4} >= scl_pu(0.01): {b}; pucl(0.5)={pucl_hi:.4} >= sscl(0.5)={sscl_hi:.4}: {c}"
        ),
    }
}

fn main() {
    let start = Instant::now();
    let mut out = Vec::new();

    let bias = suite(Suite::Bias);
    out.push(from_suite("bias_identity", &bias, &["bias_within_3_stderr"], Some(120.0)));

    let var = suite(Suite::Variance);
    out.push(from_suite(
        "variance_gap",
        &var,
        &["estimators_unbiased_3_stderr", "delta_sigma_nonnegative_2_stderr", "delta_sigma_nondecreasing", "delta_sigma_zero_at_gamma_0"],
        None,
    ));

    let grads = suite(Suite::Gradients);
    out.push(from_suite("gradient_correctness", &grads, &["loss_gradients_fd_1e-5", "encoder_chain_fd_1e-5"], Some(30.0)));
    out.push(from_suite("identity_reductions", &grads, &["identity_reductions_1e-12"], None));

    let pb = suite(Suite::PuplBound);
    out.push(from_suite(
        "pupl_seeding_bound",
        &pb,
        &["pupl_mean_ratio_le_16", "kmeanspp_mean_ratio_le_21_55", "pupl_le_kmeanspp_2_stderr"],
        Some(60.0),
    ));

    let cl = suite(Suite::CentroidLemma);
    out.push(from_suite("positive_centroid_lemma", &cl, &["exhaustive_equals_closed_form"], Some(10.0)));

    let upu = suite(Suite::Upu);
    out.push(from_suite("upu_unbiasedness", &upu, &["upu_unbiased_3_stderr", "nnpu_equals_upu_when_unclipped", "nnpu_at_least_pi_r_p_plus"], None));
    out.push(from_suite("noise_view", &upu, &["flip_rate_within_0_02", "breakdown_truth_table"], None));

    let gen = suite(Suite::Generalization);
    out.push(from_suite("generalization_bound", &gen, &["error_bound_when_condition_holds", "alignment_bound_every_instance"], None));
    out.push(from_suite("nearest_centroid_affine", &gen, &["nearest_centroid_equals_affine_score"], None));

    out.push(pipeline());
    out.push(ablation());

    let failed = out.iter().filter(|o| !o.passed).count();
    for o in &out {
        println!("{} {:<26} {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    println!("{} of {} criteria passed in {:.1}s", out.len() - failed, out.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
