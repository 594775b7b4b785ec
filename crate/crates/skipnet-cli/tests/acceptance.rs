//! Acceptance gate: one test per release criterion, each printing a single
//! `ACCEPTANCE <n> <name>: PASS|FAIL` line (visible with `--nocapture`, and
//! in the failure output otherwise).
//!
//! Criterion 3 (degree bands) fails by design: the bare doubly-logarithmic
//! construction's mean in-degree sits below the required [3,4] band at small
//! depths (2.375 at L=16), so the check — implemented exactly as stated,
//! with zero tolerance — reports the discrepancy instead of papering over
//! it. See the README's known-limitations section.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use skipnet_core::analysis::{mbd, verify_prop1, verify_prop2, loglog_degree_sweep};
use skipnet_core::cost::{
    block_cost_distribution, fc_plan, reference_fc_densenet, schedule_cost, CompressionKind,
    FlopConvention, NetworkConfig,
};
use skipnet_core::micronet::{Activation, GradCheckOptions, LossSpec, MicroNet, Tensor};
use skipnet_core::topology::{
    dense_topology, evenly_spaced, fc_log_dense_topology, log_dense_v1, log_dense_v2,
    loglog_topology, nearest, nearest_half_and_log, Budget, Scheme, Topology,
};

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {n} {name}: {}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance criterion {n} ({name}) failed: {detail}");
}

/// Criterion 1: exhaustive per-pair distance bound of the binary-gap scheme.
/// Single block: BD(i,j) <= ceil(log2 |i-j|) + 1 for L in {16, 64, 256,
/// 1024}; with 2-4 blocks the +1 becomes +n_block. Completes in under 60 s.
#[test]
fn c1_pairwise_distance_bound() {
    let start = Instant::now();
    let mut detail = String::new();
    let mut pass = true;
    for l in [16u32, 64, 256, 1024] {
        let topo = log_dense_v1(l, &[l]).unwrap();
        let rep = verify_prop1(&topo).unwrap();
        pass &= rep.pass;
        detail.push_str(&format!(
            "L={l} blocks=1 violations={} ",
            rep.violations
        ));
    }
    for blocks in [
        vec![512u32, 512],
        vec![341, 341, 342],
        vec![256, 256, 256, 256],
    ] {
        let topo = log_dense_v1(1024, &blocks).unwrap();
        let rep = verify_prop1(&topo).unwrap();
        pass &= rep.pass;
        detail.push_str(&format!(
            "L=1024 blocks={} violations={} ",
            blocks.len(),
            rep.violations
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed.as_secs() < 60;
    detail.push_str(&format!("elapsed={elapsed:?}"));
    report(1, "pairwise-distance-bound", pass, &detail);
}

/// Criterion 2: the doubly-logarithmic scheme at min_inputs=1 stays within
/// 1.5 * L * log2 log2 L + 3L edges and MBD <= ceil(log2 log2 L) + n_block
/// + 1 for L in {16, 64, 256, 1024, 4096}.
#[test]
fn c2_edge_budget_and_distance() {
    let rows = verify_prop2(&[16, 64, 256, 1024, 4096]).unwrap();
    let pass = rows.iter().all(|r| r.pass());
    let detail: String = rows
        .iter()
        .map(|r| {
            format!(
                "L={} edges={} (ref {:.0}) mbd={} (bound {}) ",
                r.layers, r.edges, r.edge_reference, r.mbd, r.mbd_bound
            )
        })
        .collect();
    report(2, "edge-budget-and-distance", pass, &detail);
}

/// Criterion 3: degree bands of the doubly-logarithmic scheme — mean
/// in-degree at min_inputs=1 within [3,4] for all L in 16..=2000, and
/// raising min_inputs to 4 adds between 1 and 1.5 for all L in 16..=1700.
/// Zero tolerance, exact integer edge counts.
///
/// This criterion is not attainable by the construction as defined: at
/// L=16 the bare topology has 38 edges, a mean in-degree of 2.375, which is
/// below the band. The check is implemented exactly as stated and reports
/// the failure honestly rather than adjusting the generator or the band.
#[test]
fn c3_mean_degree_bands() {
    let rows = loglog_degree_sweep(16, 2000, 4).unwrap();
    let mut mean_out = 0u32;
    let mut delta_out = 0u32;
    let mut first_bad_mean = None;
    let mut first_bad_delta = None;
    for (l, base, alt) in &rows {
        let m1 = base.mean_in_degree();
        if !(3.0..=4.0).contains(&m1) {
            mean_out += 1;
            first_bad_mean.get_or_insert((*l, m1));
        }
        if *l <= 1700 {
            let delta = alt.mean_in_degree() - m1;
            if !(1.0..=1.5).contains(&delta) {
                delta_out += 1;
                first_bad_delta.get_or_insert((*l, delta));
            }
        }
    }
    let pass = mean_out == 0 && delta_out == 0;
    let detail = format!(
        "{mean_out} of 1985 layer counts have mean in-degree outside [3,4] \
         (first: {first_bad_mean:?}); {delta_out} have a min-inputs-4 increment \
         outside [1,1.5] (first: {first_bad_delta:?}). The band as stated cannot \
         be met by this construction; see the README known-limitations section."
    );
    report(3, "mean-degree-bands", pass, &detail);
}

/// Criterion 4: parameter and FLOP totals of the 103-layer encoder/decoder
/// nets. The log-connected variant at growth 24 must land within 4.7 M +-10%
/// params and 42.0 G +-20% FLOPs at 224x224; the densely connected reference
/// at growth 16 within 9.4 M +-10% and 39.4 G +-20%. FLOPs counted with
/// multiplies and adds separate (two per MAC).
#[test]
fn c4_segmentation_cost_windows() {
    let within = |value: f64, center: f64, tol: f64| {
        (value - center).abs() <= center * tol
    };

    let plan = fc_plan(&NetworkConfig::fc(24)).unwrap();
    let rep = schedule_cost(&plan.schedule, FlopConvention::MacX2);
    let log_params_ok = within(rep.total_params as f64, 4.7e6, 0.10);
    let log_flops_ok = within(rep.total_flops as f64, 42.0e9, 0.20);
    let mut detail = format!(
        "fc-logdense-103 g=24: params {} (window 4.7M +-10%), flops {} (window 42.0G +-20%); ",
        rep.total_params, rep.total_flops
    );

    let sched = reference_fc_densenet(16, (224, 224), 11).unwrap();
    let rep_ref = schedule_cost(&sched, FlopConvention::MacX2);
    let ref_params_ok = within(rep_ref.total_params as f64, 9.4e6, 0.10);
    let ref_flops_ok = within(rep_ref.total_flops as f64, 39.4e9, 0.20);
    detail.push_str(&format!(
        "fc-densenet-103 g=16: params {} (window 9.4M +-10%), flops {} (window 39.4G +-20%)",
        rep_ref.total_params, rep_ref.total_flops
    ));

    report(
        4,
        "segmentation-cost-windows",
        log_params_ok && log_flops_ok && ref_params_ok && ref_flops_ok,
        &detail,
    );
}

/// Criterion 5: the final two blocks of the encoder/decoder plan carry at
/// least 45% of its total compute.
#[test]
fn c5_compute_concentration() {
    let plan = fc_plan(&NetworkConfig::fc(24)).unwrap();
    let rep = schedule_cost(&plan.schedule, FlopConvention::Mac);
    let fractions = block_cost_distribution(&rep);
    let last_two: f64 = fractions[fractions.len() - 2..].iter().sum();
    report(
        5,
        "compute-concentration",
        last_two >= 0.45,
        &format!("final two blocks carry {last_two:.4} of total FLOPs"),
    );
}

/// Criterion 6: distance orderings at L=64. With the log budget the
/// binary-gap scheme beats both uniform alternatives; with the half budget
/// the evenly-spaced and half-plus-log schemes reach MBD 2 while nearest
/// stays worse.
#[test]
fn c6_scheme_distance_orderings() {
    let l = 64u32;
    let get = |t: &Topology| mbd(t).unwrap().mbd;
    let v1 = get(&log_dense_v1(l, &[l]).unwrap());
    let near_log = get(&nearest(l, &[l], Budget::Log).unwrap());
    let even_log = get(&evenly_spaced(l, &[l], Budget::Log).unwrap());
    let near_half = get(&nearest(l, &[l], Budget::Half).unwrap());
    let even_half = get(&evenly_spaced(l, &[l], Budget::Half).unwrap());
    let nhl = get(&nearest_half_and_log(l, &[l]).unwrap());
    let pass = v1 < near_log
        && v1 < even_log
        && even_half == 2
        && nhl == 2
        && even_half < near_half;
    report(
        6,
        "scheme-distance-orderings",
        pass,
        &format!(
            "binary-gap {v1} vs nearest(log) {near_log}, evenly(log) {even_log}; \
             evenly(half) {even_half}, half+log {nhl}, nearest(half) {near_half}"
        ),
    );
}

fn classification_cfg(g: u32, topo: &Topology) -> NetworkConfig {
    let mut cfg = NetworkConfig::classification(g, topo.block_sizes());
    if topo.scheme() == Scheme::LogDenseV2 {
        cfg.compression = CompressionKind::BlockCompression;
    }
    cfg.input_resolution = (4, 4);
    cfg.num_classes = 3;
    cfg
}

fn check_gradients(topo: &Topology, cfg: &NetworkConfig, seed: u64) -> (bool, f64) {
    let net = MicroNet::build(topo, cfg, Activation::Tanh, seed).unwrap();
    let (h, w) = cfg.input_resolution;
    let input = Tensor::from_fn(3, h, w, |c, y, x| {
        ((c * 31 + y * 7 + x * 3 + seed as u32 % 13) % 17) as f64 / 17.0 - 0.5
    });
    let targets: Vec<Tensor> = net
        .head_shapes()
        .iter()
        .map(|&(c, th, tw)| Tensor::zeros(c, th, tw))
        .collect();
    let spec = LossSpec::deep_supervision(targets.len() as u32);
    let rep = net
        .grad_check(&input, &targets, &spec, &GradCheckOptions::default())
        .unwrap();
    (rep.pass, rep.max_rel_err)
}

/// Criterion 7: analytic gradients match central finite differences to
/// better than 1e-4 relative error for every scheme at L <= 16, including
/// the block-compressed variant (compression nodes in the graph) and the
/// doubly-logarithmic variant with hub widening.
#[test]
fn c7_gradient_checks_every_scheme() {
    let mut pass = true;
    let mut detail = String::new();
    let mut run = |name: &str, topo: Topology, cfg: NetworkConfig| {
        let (ok, err) = check_gradients(&topo, &cfg, 5);
        pass &= ok;
        detail.push_str(&format!("{name}: max_rel_err {err:.2e}; "));
    };

    let t = dense_topology(8, &[8]).unwrap();
    run("dense", t.clone(), classification_cfg(2, &t));
    let t = dense_topology(8, &[4, 4]).unwrap();
    run("dense-2b", t.clone(), classification_cfg(2, &t));
    let t = log_dense_v1(16, &[8, 8]).unwrap();
    run("logdense-v1", t.clone(), classification_cfg(2, &t));
    let t = log_dense_v2(12, &[6, 6], 2).unwrap();
    run("logdense-v2", t.clone(), classification_cfg(2, &t));
    let t = nearest(8, &[8], Budget::Log).unwrap();
    run("nearest", t.clone(), classification_cfg(2, &t));
    let t = evenly_spaced(8, &[8], Budget::Log).unwrap();
    run("evenly-spaced", t.clone(), classification_cfg(2, &t));
    let t = nearest_half_and_log(8, &[8]).unwrap();
    run("nearest-half-log", t.clone(), classification_cfg(2, &t));
    for hub in [1u32, 3] {
        let t = loglog_topology(16, &[16], 3).unwrap();
        let mut cfg = classification_cfg(2, &t);
        cfg.hub_multiplier = hub;
        run(&format!("loglog-hub{hub}"), t, cfg);
    }
    let t = fc_log_dense_topology(&[2, 3, 2], 2).unwrap();
    let mut cfg = NetworkConfig::fc(2);
    cfg.block_sizes = vec![2, 3, 2];
    cfg.input_resolution = (8, 8);
    cfg.num_classes = 3;
    run("fc-logdense", t, cfg);

    report(7, "gradient-checks-every-scheme", pass, &detail);
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Criterion 8: the reference implementation allocates exactly as many
/// parameters as the cost model counts, across at least 10 randomized
/// desk-scale configurations.
#[test]
fn c8_parameter_count_equivalence() {
    let mut state = 0xace5_u64;
    let mut checked = 0u32;
    let mut detail = String::new();
    for i in 0..12u32 {
        let l = 4 + (splitmix64(&mut state) % 13) as u32; // 4..=16
        let g = 1 + (splitmix64(&mut state) % 4) as u32; // 1..=4
        // The block-compressed scheme needs at least two blocks.
        let two_blocks = splitmix64(&mut state) % 2 == 0 || i % 6 == 2;
        let blocks = if two_blocks {
            vec![l / 2, l - l / 2]
        } else {
            vec![l]
        };
        let topo = match i % 6 {
            0 => dense_topology(l, &blocks).unwrap(),
            1 => log_dense_v1(l, &blocks).unwrap(),
            2 => log_dense_v2(l, &blocks, g).unwrap(),
            3 => loglog_topology(l, &blocks, 2).unwrap(),
            4 => nearest(l, &blocks, Budget::Log).unwrap(),
            _ => nearest_half_and_log(l, &blocks).unwrap(),
        };
        let mut cfg = classification_cfg(g, &topo);
        cfg.bottleneck = splitmix64(&mut state) % 2 == 0;
        let net = MicroNet::build(&topo, &cfg, Activation::Tanh, 1).unwrap();
        let counted = net.plan().schedule.params();
        let allocated = net.param_count() as u64;
        if counted != allocated {
            report(
                8,
                "parameter-count-equivalence",
                false,
                &format!(
                    "{} L={l} g={g} blocks={blocks:?}: cost model {counted}, allocated {allocated}",
                    topo.scheme().name()
                ),
            );
        }
        checked += 1;
        detail.push_str(&format!("{} L={l} g={g}: {counted}; ", topo.scheme().name()));
    }
    report(
        8,
        "parameter-count-equivalence",
        checked >= 10,
        &detail,
    );
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_skipnet")
}

fn run_cli(args: &[&str]) {
    let out = Command::new(bin())
        .args(args)
        .output()
        .expect("spawning the skipnet binary");
    // Verification subcommands may exit 1; determinism is judged on bytes.
    assert!(
        out.status.code().is_some(),
        "command {args:?} was killed by a signal"
    );
}

/// Criterion 9: every CLI command, rerun with identical flags and seed,
/// reproduces its output file and its manifest byte-for-byte, and the
/// manifest digest matches the bytes on disk.
#[test]
fn c9_cli_rerun_determinism() {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-determinism");
    fs::create_dir_all(&dir).unwrap();
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();

    let topo = p("topo.json");
    let commands: Vec<Vec<String>> = vec![
        vec![
            "generate", "--scheme", "loglog", "--layers", "32", "--out", &topo,
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        ["render", &topo, "--format", "pgm-binary", "--out", &p("adj.pgm")]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        ["analyze", &topo, "--format", "csv", "--out", &p("report.csv")]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        [
            "cost", "--preset", "fc-logdense-103", "--mac-x2", "--format", "json", "--out",
            &p("cost.json"),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        [
            "verify", "--prop1", "--layers", "64", "--out", &p("prop1.txt"),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        [
            "gradcheck", "--scheme", "logdense-v1", "--layers", "8", "--seed", "11", "--out",
            &p("grad.json"),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
    ];

    let mut pass = true;
    let mut detail = String::new();
    for args in &commands {
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        run_cli(&argv);
        let out_path = PathBuf::from(args.last().unwrap());
        let manifest_path = PathBuf::from(format!("{}.manifest.json", args.last().unwrap()));
        let first = fs::read(&out_path).unwrap();
        let first_manifest = fs::read(&manifest_path).unwrap();

        run_cli(&argv);
        let second = fs::read(&out_path).unwrap();
        let second_manifest = fs::read(&manifest_path).unwrap();

        let bytes_equal = first == second && first_manifest == second_manifest;

        // Digest recorded in the manifest matches the actual output bytes.
        use sha2::{Digest, Sha256};
        let hex: String = Sha256::digest(&first)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let m: serde_json::Value = serde_json::from_slice(&first_manifest).unwrap();
        let digest_ok = m["outputs"][0]["sha256"] == serde_json::Value::String(hex);

        pass &= bytes_equal && digest_ok;
        detail.push_str(&format!(
            "{}: rerun {} digest {}; ",
            args[0],
            if bytes_equal { "identical" } else { "DIFFERS" },
            if digest_ok { "ok" } else { "MISMATCH" }
        ));
    }
    report(9, "cli-rerun-determinism", pass, &detail);
}
