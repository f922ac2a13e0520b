#![allow(dead_code)]

pub mod cole_hopf;
pub mod gradcheck;

use shockfuse::burgers::{self, solve_burgers, BurgersConfig};
use shockfuse::field_io::{CaseRecord, Column, ConditionKind, FieldFile, Split, ZoneGrid};

/// One zone on `x = i·h`, `y = j·0.1` with `U = 1` for `x ≤ station` and `0`
/// beyond, plus a smooth `V`.
pub fn step_zone(station: f64, h: f64, ni: usize, nj: usize) -> ZoneGrid {
    let i_s = (station / h).round() as usize;
    let (mut xs, mut ys, mut us, mut vs) = (vec![], vec![], vec![], vec![]);
    for j in 0..nj {
        for i in 0..ni {
            let x = i as f64 * h;
            xs.push(x);
            ys.push(j as f64 * 0.1);
            us.push(if i <= i_s { 1.0 } else { 0.0 });
            vs.push(0.1 * x + 0.01 * j as f64);
        }
    }
    let col = |name: &str, values: Vec<f64>| Column {
        name: name.into(),
        values,
    };
    ZoneGrid::new(ni, nj, vec![col("X", xs), col("Y", ys), col("U", us), col("V", vs)]).unwrap()
}

pub fn step_case(condition: f64, station: f64) -> CaseRecord {
    let file = FieldFile {
        title: None,
        zones: vec![step_zone(station, 0.002, 201, 5)],
    };
    CaseRecord::new(file, condition, ConditionKind::BackPressure, format!("step_{condition}")).unwrap()
}

/// Reduced solver settings for fast tests.
pub fn small_config(nu: f64) -> BurgersConfig {
    BurgersConfig {
        nu,
        nx: 129,
        nt: 101,
        refine: 4,
        substeps: 2,
        ..BurgersConfig::default()
    }
}

pub fn burgers_case(cfg: &BurgersConfig, name: &str) -> CaseRecord {
    let field = solve_burgers(cfg).unwrap();
    let file = FieldFile {
        title: Some(format!("burgers nu={}", cfg.nu)),
        zones: vec![field.to_zone()],
    };
    CaseRecord::new(file, cfg.nu, ConditionKind::Viscosity, name).unwrap()
}

/// The default viscosity set solved in memory, split into train and test.
pub fn burgers_dataset(base: &BurgersConfig) -> (Vec<CaseRecord>, Vec<CaseRecord>) {
    let (mut train, mut test) = (vec![], vec![]);
    for c in burgers::default_dataset_cases() {
        let case = burgers_case(
            &BurgersConfig {
                nu: c.nu,
                ..base.clone()
            },
            &c.file_name,
        );
        match c.split {
            Split::Train => train.push(case),
            Split::Test => test.push(case),
        }
    }
    (train, test)
}

/// Max relative deviation of `a` from `b` with an absolute floor.
pub fn max_rel_diff(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Two-zone nozzle-layout file (100×60 and 40×30) with values spanning many
/// magnitudes and signs.
pub fn golden_file() -> FieldFile {
    use shockfuse::field_io::NOZZLE_COLUMNS;
    let zone = |ni: usize, nj: usize, x0: f64, seed: f64| {
        let n = ni * nj;
        let columns = NOZZLE_COLUMNS
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let values = (0..n)
                    .map(|p| {
                        let (i, j) = ((p % ni) as f64, (p / ni) as f64);
                        match c {
                            0 => x0 + i * 1.3e-5,
                            1 => j * 2.5e-6 - 7.5e-5,
                            _ => {
                                let mag = 10f64.powi((c as i32 * 7 + p as i32) % 41 - 20);
                                ((seed + p as f64 * 0.618_033_988_75 + c as f64).sin()) * mag
                            }
                        }
                    })
                    .collect();
                Column {
                    name: name.to_string(),
                    values,
                }
            })
            .collect();
        let mut z = ZoneGrid::new(ni, nj, columns).unwrap();
        z.title = Some(format!("block {ni}x{nj}"));
        z
    };
    FieldFile {
        title: Some("golden nozzle".into()),
        zones: vec![zone(100, 60, 0.0, 0.3), zone(40, 30, 1.3e-3, 1.7)],
    }
}
