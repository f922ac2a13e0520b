//! Acceptance suite. Runs every criterion in order and prints one line per
//! criterion; exits non-zero if any criterion fails unexpectedly.
//!
//! Pass criterion ids (`C4 C7 ...`) as arguments to run a subset.

mod common;

use std::time::Instant;

use common::cole_hopf::cole_hopf;
use common::gradcheck::{max_fd_error, with_dropout};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use shockfuse::burgers::{estimate_t_shock, solve_burgers, BurgersConfig, SpaceTimeField, NU_REF};
use shockfuse::eval::{evaluate_model, improvement_pct, median, run_ablation, AblationVariant};
use shockfuse::experiment::{calibrate, train_experiment, ExperimentConfig, ModelKind, TrainedModel};
use shockfuse::features::{
    rbf_envelopes, soft_indicator, BranchInput, FeatureParams, FeaturePipeline, FeatureSet, IndicatorForm,
    ShockCalibration, WeightComponents, WeightParams, DEFAULT_SCALES,
};
use shockfuse::field_io::{parse_tecplot, write_prediction_file, Axis, CaseRecord, Column, ConditionKind, FieldFile, ZoneGrid};
use shockfuse::nn::{AdamWConfig, ArchitectureSpec, OptimizerState};
use shockfuse::rng::SeededRng;
use shockfuse::trainer::{group_split, huber, weighted_huber};

const EXACT: f64 = 1e-12;
const INTERP_MAX_REL_L2: f64 = 0.04;
const EXTRAP_MAX_REL_L2: f64 = 0.05;
const WALL_CLOCK_MAX_S: f64 = 30.0 * 60.0;
const FD_MAX_REL: f64 = 1e-4;
const FD_MAX_S: f64 = 10.0;
const HUBER_C1_TOL: f64 = 1e-6;
const ADAMW_TOL: f64 = 1e-9;
const CALIB_TOL: f64 = 1e-6;
const SPLIT_TRIALS: usize = 1000;
const SOLVER_MAX_ABS: f64 = 1e-3;
const REFINE_MIN_RATIO: f64 = 3.0;

/// Smallest budget that still runs every stage of the pipeline.
fn ablation_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::burgers();
    cfg.train.phases[0].max_epochs = 3;
    cfg.train.phases[1].max_epochs = 3;
    cfg.train.max_points_per_case = Some(600);
    cfg.train.max_val_points_per_case = Some(600);
    cfg.train.clean_loss_points = 256;
    cfg
}

struct Outcome {
    pass: bool,
    detail: String,
    /// Set when the criterion cannot hold as stated; the line is reported
    /// but does not fail the suite.
    known_false: Option<&'static str>,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome {
        pass,
        detail,
        known_false: None,
    }
}

struct Suite {
    filter: Vec<String>,
    lines: Vec<(String, Outcome)>,
}

impl Suite {
    fn run(&mut self, id: &str, name: &str, f: impl FnOnce() -> Outcome) {
        if !self.filter.is_empty() && !self.filter.iter().any(|x| id.starts_with(x.as_str())) {
            return;
        }
        let t0 = Instant::now();
        let o = f();
        let verdict = match (o.pass, o.known_false) {
            (true, _) => "PASS",
            (false, None) => "FAIL",
            (false, Some(_)) => "FAIL (known)",
        };
        let line = format!(
            "{id:<4} {name:<44} {verdict:<13} {} [{:.1}s]",
            o.detail,
            t0.elapsed().as_secs_f64()
        );
        println!("{line}");
        if let Some(why) = o.known_false {
            if !o.pass {
                println!("     note: {why}");
            }
        }
        self.lines.push((id.to_string(), o));
    }
}

fn main() {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| a.starts_with('C'))
        .collect();
    let mut s = Suite {
        filter,
        lines: vec![],
    };
    println!("acceptance suite");
    s.run("C4", "gradient oracle (finite differences)", c04_gradients);
    s.run("C5", "feature invariants", c05_features);
    s.run("C6", "Huber loss suite", c06_loss);
    s.run("C7", "AdamW first-step oracle", c07_adamw);
    s.run("C8", "Tecplot round trip and error columns", c08_tecplot);
    s.run("C9a", "calibration recovery (synthetic steps)", c09a_synthetic);
    s.run("C9b", "t_shock fit nonincreasing in viscosity", c09b_shock_time);
    s.run("C10", "split hygiene", c10_split);
    s.run("C11", "solver vs Cole-Hopf", c11_solver);

    let wants = |ids: &[&str]| s.filter.is_empty() || s.filter.iter().any(|f| ids.contains(&f.as_str()));
    if wants(&["C1", "C2", "C3", "C12"]) {
        let t0 = Instant::now();
        let (train, test) = common::burgers_dataset(&BurgersConfig::default());
        println!("     dataset: {} train + {} test cases at default size [{:.1}s]", train.len(), test.len(), t0.elapsed().as_secs_f64());
        let (lo, hi) = train
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), c| (l.min(c.condition), h.max(c.condition)));
        let inside = |c: &&CaseRecord| (lo..=hi).contains(&c.condition);
        let interp = test.iter().find(inside).expect("a test case inside the training range");
        let extrap = test.iter().find(|c| !inside(c)).expect("a test case outside the training range");
        let mut reference = None;
        if wants(&["C1", "C2", "C3"]) {
            let t0 = Instant::now();
            let cfg = ExperimentConfig::burgers();
            let model = train_experiment(&train, &cfg).expect("training runs");
            let secs = t0.elapsed().as_secs_f64();
            let e_in = evaluate_model(&model, interp, "shock_aware", cfg.train.seed).unwrap().joint_rel_l2;
            let e_ex = evaluate_model(&model, extrap, "shock_aware", cfg.train.seed).unwrap().joint_rel_l2;
            println!(
                "     trained {} epochs in {secs:.0}s on {} core(s)",
                model.history.epochs.len(),
                std::thread::available_parallelism().map_or(1, |n| n.get())
            );
            s.run("C1", "Burgers interpolation", || {
                outcome(
                    e_in <= INTERP_MAX_REL_L2 && secs <= WALL_CLOCK_MAX_S,
                    format!(
                        "relL2 {:.2}% (<= {:.1}%) at nu={:.4e}, train {secs:.0}s (<= {WALL_CLOCK_MAX_S:.0}s)",
                        100.0 * e_in,
                        100.0 * INTERP_MAX_REL_L2,
                        interp.condition
                    ),
                )
            });
            s.run("C2", "Burgers extrapolation", || {
                outcome(
                    e_ex <= EXTRAP_MAX_REL_L2,
                    format!(
                        "relL2 {:.2}% (<= {:.1}%) at nu={:.4e}",
                        100.0 * e_ex,
                        100.0 * EXTRAP_MAX_REL_L2,
                        extrap.condition
                    ),
                )
            });
            reference = Some(model);
        }
        if let Some(seed0) = &reference {
            s.run("C3", "baseline ordering over 3 seeds", || c03_ordering(&train, &test, seed0));
        }
        s.run("C12", "ablation harness", || c12_ablation(&train, interp));
    }

    let unexpected: Vec<&str> = s
        .lines
        .iter()
        .filter(|(_, o)| !o.pass && o.known_false.is_none())
        .map(|(id, _)| id.as_str())
        .collect();
    let known: Vec<&str> = s
        .lines
        .iter()
        .filter(|(_, o)| !o.pass && o.known_false.is_some())
        .map(|(id, _)| id.as_str())
        .collect();
    println!(
        "summary: {} run, {} pass, {} fail, {} known-false",
        s.lines.len(),
        s.lines.len() - unexpected.len() - known.len(),
        unexpected.len(),
        known.len()
    );
    if !unexpected.is_empty() {
        eprintln!("failed: {}", unexpected.join(" "));
        std::process::exit(1);
    }
}

fn c04_gradients() -> Outcome {
    let t0 = Instant::now();
    let fusion = ArchitectureSpec::fusion(2, 9, &[8, 8], &[8], 2, 0.3, 0.05);
    let dot = with_dropout(ArchitectureSpec::dot_product(1, 9, &[8, 8], 8, 2, 0.0, 0.05), 0.3);
    let e1 = max_fd_error(fusion, 1);
    let e2 = max_fd_error(dot, 2);
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        e1 < FD_MAX_REL && e2 < FD_MAX_REL && secs < FD_MAX_S,
        format!("max rel err fusion {e1:.1e}, dot {e2:.1e} (< {FD_MAX_REL:e}); {secs:.2}s (< {FD_MAX_S}s)"),
    )
}

fn line_case(a0: f64, a1: f64, cond: f64) -> (CaseRecord, FeaturePipeline) {
    let station = a0 + a1 * cond;
    let (ni, nj) = (81, 3);
    let h = 0.005;
    let (mut xs, mut ys, mut us) = (vec![], vec![], vec![]);
    for j in 0..nj {
        for i in 0..ni {
            // the grid passes exactly through the station
            let x = station + (i as f64 - 40.0) * h;
            xs.push(x);
            ys.push(j as f64);
            us.push(if x <= station { 2.0 } else { 0.5 } + 0.1 * j as f64);
        }
    }
    let col = |n: &str, v: Vec<f64>| Column {
        name: n.into(),
        values: v,
    };
    let zone = ZoneGrid::new(ni, nj, vec![col("X", xs), col("Y", ys), col("U", us)]).unwrap();
    let case = CaseRecord::new(
        FieldFile {
            title: None,
            zones: vec![zone],
        },
        cond,
        ConditionKind::BackPressure,
        "line",
    )
    .unwrap();
    let params = FeatureParams {
        set: FeatureSet::ShockAware,
        branch: BranchInput::Condition,
        ..FeatureParams::default()
    };
    let pipe = FeaturePipeline::fit(params, ShockCalibration::fixed(a0, a1, Axis::X), &[case.clone()]).unwrap();
    (case, pipe)
}

fn c05_features() -> Outcome {
    let mut worst = 0.0f64;
    let mut note = |v: f64| worst = worst.max(v);
    let mut ok = true;

    let (case, pipe) = line_case(0.1, 0.004, 25.0);
    let f = pipe.trunk_features(&case.zones[0], 25.0).unwrap();
    let row = f.row(40);
    note(row[2].abs());
    note((row[3] - 0.5).abs());
    for m in 0..3 {
        note((row[6 + m] - 1.0).abs());
    }

    let mut rng = SeededRng::seed_from_u64(5);
    for _ in 0..2000 {
        let d: f64 = rng.gen_range(-2.0..2.0);
        let k: f64 = rng.gen_range(1.0..5000.0);
        for form in [IndicatorForm::Logistic, IndicatorForm::Tanh] {
            note((soft_indicator(d, k, form) + soft_indicator(-d, k, form) - 1.0).abs());
        }
        let dx: f64 = rng.gen_range(1e-4..0.1);
        let [p1, p2, p3] = rbf_envelopes(d * 0.05, dx, DEFAULT_SCALES);
        ok &= p1 <= p2 && p2 <= p3;
    }

    let mut min_w = f64::INFINITY;
    for alpha in [0.1, 0.5, 2.0, 10.0] {
        for beta in [0.0, 0.8, 5.0] {
            for gamma in [0.0, 0.5, 3.0] {
                let params = WeightParams {
                    alpha,
                    beta,
                    gamma,
                    ..WeightParams::default()
                };
                let w = WeightComponents::compute(&case, &pipe, &params).unwrap();
                for lambda in [0.0, 0.4, 0.7, 1.0] {
                    min_w = w.combined(lambda).into_iter().fold(min_w, f64::min);
                }
            }
        }
    }
    ok &= min_w >= 1.0;

    for shift in [-2.5, 0.37, 4.0] {
        let (moved, mp) = line_case(0.1 + shift, 0.004, 25.0);
        let g = mp.trunk_features(&moved.zones[0], 25.0).unwrap();
        for (r0, r1) in f.outer_iter().zip(g.outer_iter()) {
            for c in 2..9 {
                note((r0[c] - r1[c]).abs());
            }
        }
    }
    outcome(
        ok && worst <= EXACT,
        format!("max deviation {worst:.1e} (<= {EXACT:e}), min weight {min_w:.3} (>= 1), envelopes ordered: {ok}"),
    )
}

fn c06_loss() -> Outcome {
    let a = huber(0.25, 0.6).0;
    let b = huber(2.0, 0.6).0;
    let mut c1 = 0.0f64;
    for delta in [0.1, 0.6, 1.0, 3.0] {
        for sign in [-1.0, 1.0] {
            let h = 1e-9;
            let (li, gi) = huber(sign * (delta - h), delta);
            let (lo, go) = huber(sign * (delta + h), delta);
            c1 = c1.max((li - lo).abs()).max((gi - go).abs());
        }
    }
    let mut rng = SeededRng::seed_from_u64(6);
    let n = 200;
    let p = Array2::from_shape_simple_fn((n, 2), || rng.gen_range(-3.0..3.0));
    let t = Array2::from_shape_simple_fn((n, 2), || rng.gen_range(-3.0..3.0));
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..4.0)).collect();
    let base = weighted_huber(p.view(), t.view(), &w, 0.6).unwrap().0;
    let mut scale_dev = 0.0f64;
    for c in [1e-3, 0.5, 7.0, 1e4] {
        let ws: Vec<f64> = w.iter().map(|x| x * c).collect();
        scale_dev = scale_dev.max((weighted_huber(p.view(), t.view(), &ws, 0.6).unwrap().0 - base).abs());
    }
    let exact = (a - 0.03125).abs() <= EXACT && (b - 1.02).abs() <= EXACT;
    outcome(
        exact && c1 <= HUBER_C1_TOL && scale_dev <= EXACT,
        format!("L(0.25)={a}, L(2)={b}, C1 gap {c1:.1e} (<= {HUBER_C1_TOL:e}), scale dev {scale_dev:.1e} (<= {EXACT:e})"),
    )
}

fn c07_adamw() -> Outcome {
    let cfg = AdamWConfig {
        lr: 1e-3,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.01,
        clipnorm: None,
    };
    let mut opt = OptimizerState::new(1, cfg);
    let mut theta = [1.0];
    opt.step(&mut theta, &mut [0.5]).unwrap();
    // m̂ = g and v̂ = g² after bias correction
    let oracle = 1.0 - 1e-3 * (0.5 / (0.25f64.sqrt() + 1e-8) + 0.01 * 1.0);
    let dev = (theta[0] - oracle).abs();
    outcome(
        dev <= ADAMW_TOL && (theta[0] - 0.998990).abs() < 5e-7,
        format!("theta'={:.9} oracle {oracle:.9} |diff| {dev:.1e} (<= {ADAMW_TOL:e})", theta[0]),
    )
}

fn c08_tecplot() -> Outcome {
    let golden = common::golden_file();
    let text = golden.to_tecplot();
    let parsed = parse_tecplot(&text).unwrap();
    let round = parsed == golden && parsed.to_tecplot() == text;
    let sizes: Vec<String> = parsed.zones.iter().map(|z| format!("{}x{}", z.i_count, z.j_count)).collect();

    let col = |n: &str, v: &[f64]| Column {
        name: n.into(),
        values: v.to_vec(),
    };
    let zone = ZoneGrid::new(
        4,
        1,
        vec![
            col("X", &[0.0, 1.0, 2.0, 3.0]),
            col("Y", &[0.0; 4]),
            col("U", &[2.0, -1.0, 0.0, 0.5]),
            col("V", &[4.0, 1e-6, -3.0, 1.0]),
        ],
    )
    .unwrap();
    let case = CaseRecord::new(
        FieldFile {
            title: None,
            zones: vec![zone],
        },
        1.0,
        ConditionKind::BackPressure,
        "four",
    )
    .unwrap();
    let out = parse_tecplot(&write_prediction_file(&case, &[1.5, -1.0, 0.25, 1.0], &[4.0, 0.0, -1.0, 2.0], 1e-3).unwrap()).unwrap();
    let z = &out.zones[0];
    let cols_ok = z.column("Error_U").unwrap() == [0.25, 0.0, 250.0, 1.0]
        && z.column("Error_V").unwrap() == [0.0, 1e-3, 2.0 / 3.0, 1.0]
        && z.column("ErrorU_L2").unwrap() == [0.0625, 0.0, 62500.0, 1.0]
        && z.column("ErrorV_L2").unwrap() == [0.0, 1e-6, 4.0 / 9.0, 1.0];
    outcome(
        round && cols_ok,
        format!("zones {} round trip exact: {round}; 4-point error columns exact: {cols_ok}", sizes.join(" + ")),
    )
}

fn c09a_synthetic() -> Outcome {
    let cases: Vec<CaseRecord> = [15.0, 20.0, 25.0, 30.0]
        .iter()
        .map(|&pr| common::step_case(pr, 0.1 + 0.004 * pr))
        .collect();
    let c = calibrate(&cases, true).unwrap();
    let r = c.robust.as_ref().unwrap();
    let (da0, da1) = ((c.a0 - 0.1).abs(), (c.a1 - 0.004).abs());
    let robust_ok = (r.a0 - 0.1).abs() < CALIB_TOL && (r.a1 - 0.004).abs() < CALIB_TOL;
    outcome(
        da0 < CALIB_TOL && da1 < CALIB_TOL && robust_ok,
        format!("|da0| {da0:.1e}, |da1| {da1:.1e} (< {CALIB_TOL:e}); Huber fit agrees: {robust_ok}"),
    )
}

fn exact_field(like: &SpaceTimeField, nu: f64) -> SpaceTimeField {
    let mut f = like.clone();
    for (k, &t) in like.t.iter().enumerate() {
        for (i, &x) in like.x.iter().enumerate() {
            f.u[[k, i]] = cole_hopf(x, t, nu);
        }
    }
    f
}

fn c09b_shock_time() -> Outcome {
    let mut pts = vec![];
    let mut oracle = vec![];
    for factor in shockfuse::burgers::TRAIN_NU_FACTORS {
        let nu = factor * NU_REF;
        let cfg = BurgersConfig {
            nu,
            nx: 129,
            nt: 201,
            refine: 8,
            substeps: 2,
            ..BurgersConfig::default()
        };
        let field = solve_burgers(&cfg).unwrap();
        pts.push((nu, estimate_t_shock(&field).unwrap()));
        oracle.push(estimate_t_shock(&exact_field(&field, nu)).unwrap());
    }
    let fit = shockfuse::burgers::ShockTimeCalibration::from_points(pts.clone()).unwrap();
    let ts: Vec<String> = pts.iter().map(|p| format!("{:.3}", p.1)).collect();
    let os: Vec<String> = oracle.iter().map(|t| format!("{t:.3}")).collect();
    let oracle_rises = oracle.windows(2).all(|w| w[1] >= w[0]) && oracle.last() > oracle.first();
    Outcome {
        pass: fit.a1 <= 0.0,
        detail: format!(
            "slope {:+.3} per unit nu; solver t_shock [{}], Cole-Hopf [{}]",
            fit.a1,
            ts.join(" "),
            os.join(" ")
        ),
        known_false: oracle_rises.then_some(
            "viscosity delays steepening, so the exact solution's t_shock rises with nu; \
             the solver matches the exact trend",
        ),
    }
}

fn c10_split() -> Outcome {
    let mut rng = SeededRng::seed_from_u64(10);
    let mut violations = 0;
    for trial in 0..SPLIT_TRIALS {
        let n_groups = rng.gen_range(2..12);
        let n = rng.gen_range(n_groups..80);
        let conds: Vec<f64> = (0..n)
            .map(|i| if i < n_groups { i as f64 } else { rng.gen_range(0..n_groups) as f64 } * 5.0)
            .collect();
        let frac = rng.gen_range(0.05..0.95);
        let (tr, va) = group_split(&conds, frac, trial as u64).unwrap();
        let disjoint = tr.iter().all(|&i| va.iter().all(|&j| conds[i] != conds[j]));
        if !disjoint || tr.len() + va.len() != n || tr.is_empty() || va.is_empty() {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{violations} violations in {SPLIT_TRIALS} trials"))
}

fn c11_solver() -> Outcome {
    let cfg = BurgersConfig::default();
    let field = solve_burgers(&cfg).unwrap();
    let mut worst = 0.0f64;
    for t in [0.25, 0.5, 1.0] {
        let k = (t / cfg.t_end * (cfg.nt - 1) as f64).round() as usize;
        let tk = field.t[k];
        for (i, &x) in field.x.iter().enumerate() {
            worst = worst.max((field.u[[k, i]] - cole_hopf(x, tk, NU_REF)).abs());
        }
    }
    let nu = 4.0 * NU_REF;
    let errs: Vec<f64> = [2, 4, 8]
        .iter()
        .map(|&r| {
            let f = solve_burgers(&BurgersConfig {
                nu,
                nx: 65,
                nt: 11,
                refine: r,
                substeps: r,
                ..BurgersConfig::default()
            })
            .unwrap();
            let k = f.t.len() - 1;
            f.x.iter()
                .enumerate()
                .map(|(i, &x)| (f.u[[k, i]] - cole_hopf(x, f.t[k], nu)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let ratio_ok = ratios.iter().all(|&r| r >= REFINE_MIN_RATIO);
    outcome(
        worst < SOLVER_MAX_ABS && ratio_ok,
        format!(
            "max abs err {worst:.2e} (< {SOLVER_MAX_ABS:e}); refinement ratios {:.2} {:.2} (>= {REFINE_MIN_RATIO})",
            ratios[0], ratios[1]
        ),
    )
}

/// Mean joint error over the test cases.
fn mean_joint(model: &TrainedModel, test: &[CaseRecord]) -> f64 {
    let sum: f64 = test
        .iter()
        .map(|c| evaluate_model(model, c, model.kind.as_str(), 0).unwrap().joint_rel_l2)
        .sum();
    sum / test.len() as f64
}

/// Both families at the full preset budget; `seed0` is the shock-aware model
/// already trained with seed 0, which the comparison would reproduce exactly.
fn c03_ordering(train: &[CaseRecord], test: &[CaseRecord], seed0: &TrainedModel) -> Outcome {
    let mut per_kind = vec![];
    for kind in [ModelKind::ShockAware, ModelKind::Vanilla] {
        let errs: Vec<f64> = (0..3u64)
            .map(|seed| {
                if kind == ModelKind::ShockAware && seed == 0 {
                    return mean_joint(seed0, test);
                }
                let mut cfg = ExperimentConfig::burgers();
                cfg.model = kind;
                cfg.train.seed = seed;
                mean_joint(&train_experiment(train, &cfg).unwrap(), test)
            })
            .collect();
        let shown: Vec<String> = errs.iter().map(|e| format!("{:.2}", 100.0 * e)).collect();
        println!("     {}: per-seed mean joint relL2 % [{}]", kind.as_str(), shown.join(" "));
        per_kind.push(median(&mut errs.clone()));
    }
    let (sa, va) = (per_kind[0], per_kind[1]);
    outcome(
        sa <= va,
        format!(
            "median joint relL2 shock_aware {:.2}% vs vanilla {:.2}% ({:+.1}%)",
            100.0 * sa,
            100.0 * va,
            improvement_pct(sa, va)
        ),
    )
}

fn c12_ablation(train: &[CaseRecord], test: &CaseRecord) -> Outcome {
    let rows = run_ablation(train, test, &ablation_config()).unwrap();
    let complete = rows.len() == AblationVariant::ALL.len()
        && rows.iter().zip(AblationVariant::ALL).all(|(r, v)| r.variant == v)
        && rows.iter().all(|r| {
            r.metrics
                .channels
                .iter()
                .all(|c| c.nrmse_pct.is_finite() && c.nmae_pct.is_finite())
        });
    let table = shockfuse::eval::ablation_csv(&rows);
    for l in table.lines() {
        println!("     {l}");
    }
    let no_grad = rows
        .iter()
        .find(|r| r.variant == AblationVariant::NoGradientWeighting)
        .map_or(f64::NAN, |r| r.max_gradient_weight_deviation);
    outcome(
        complete && no_grad == 0.0,
        format!("{} variants with finite NRMSE/NMAE; no-gradient W_g deviation {no_grad}", rows.len()),
    )
}
