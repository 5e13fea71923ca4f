use rmc_core::bench::{instance, presets, INSTANCE_IDS};
use rmc_core::config::Config;
use rmc_core::emulators::{BasisSpec, MethodSpec};
use rmc_core::model::{ModelSpec, Param, Volatility};
use rmc_core::paths::make_test_set;
use rmc_core::policy::{european_value, forward_eval};
use rmc_core::solvers::{solve, DesignSpec, SolverConfig};
use rmc_core::store::StoredFit;
use rmc_core::swing::{solve_swing_fixed, swing_eval, SwingSpec};
use rmc_core::{PathSet, RandomStream};

fn ls(n: usize) -> SolverConfig {
    SolverConfig::Ls {
        n,
        method: MethodSpec::Lm {
            basis: BasisSpec::Poly {
                degree: 2,
                include_payoff: false,
                sorted: false,
            },
        },
        lookahead: None,
    }
}

fn swing_config(n_swing: usize, refract: f64) -> (SwingSpec, DesignSpec, MethodSpec) {
    let cfg = Config::from_toml_str(&format!(
        r#"
[model]
dim = 1
maturity = 1.0
dt = 0.05
r = 0.05
sigma = 0.3
x0 = 100.0
strike = 100.0
payoff = "put"
dynamics = "gbm"
[solver]
kind = "fixed"
design = {{ domain = {{ type = "box", lower = [60.0], upper = [100.0] }}, fill = "lattice", n = 20, nrep = 20 }}
method = {{ kind = "gp", hyper = {{ mode = "fixed", lengthscale = 10.0, variance = 4.0 }} }}
[swing]
n_swing = {n_swing}
refract = {refract}
"#
    ))
    .unwrap();
    let spec = cfg.swing_spec().unwrap().unwrap();
    let SolverConfig::Fixed { design, method, .. } = cfg.solver().unwrap().clone() else {
        unreachable!()
    };
    (spec, design, method)
}

#[test]
fn every_instance_builds_a_test_set() {
    for id in INSTANCE_IDS {
        let inst = instance(id).unwrap();
        let test = make_test_set(&inst.model, id, 1000, inst.test_seed).unwrap();
        assert_eq!(test.steps(), inst.model.steps());
        assert_eq!(test.dim(), inst.model.dim);
        let (lo, hi) = inst.band_range();
        assert!(lo < inst.reference && inst.reference < hi);
    }
    assert_eq!(presets().len(), 6);
    for p in presets() {
        for dim in [1, 2, 3, 5] {
            p.for_dim(dim).unwrap();
        }
    }
}

#[test]
fn stored_fit_round_trip_preserves_prices() {
    let inst = instance("M3").unwrap();
    let fit = solve(&inst.model, &ls(5000), &RandomStream::new(1)).unwrap();
    let test = make_test_set(&inst.model, "M3", 2000, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("fit.json");
    StoredFit::Single(fit.clone()).write(&file).unwrap();
    let StoredFit::Single(back) = StoredFit::read(&file).unwrap() else {
        panic!("wrong variant")
    };
    assert_eq!(back.fits, fit.fits);
    assert_eq!(
        forward_eval(&test, &back).unwrap().price.to_bits(),
        forward_eval(&test, &fit).unwrap().price.to_bits()
    );
    let text = std::fs::read_to_string(&file)
        .unwrap()
        .replace("\"version\":1", "\"version\":9");
    assert!(StoredFit::from_json(&text).is_err());
}

#[test]
fn path_files_round_trip() {
    let inst = instance("M4").unwrap();
    let test = make_test_set(&inst.model, "M4", 1000, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("m4.paths");
    test.write(&file).unwrap();
    let back = PathSet::read(&file).unwrap();
    assert_eq!(back.header, test.header);
    for k in 0..=test.steps() {
        assert_eq!(back.at(k).as_slice(), test.at(k).as_slice());
    }
}

#[test]
fn same_seed_same_fit_different_seed_different_fit() {
    let inst = instance("M1").unwrap();
    let a = solve(&inst.model, &ls(3000), &RandomStream::new(4)).unwrap();
    let b = solve(&inst.model, &ls(3000), &RandomStream::new(4)).unwrap();
    let c = solve(&inst.model, &ls(3000), &RandomStream::new(5)).unwrap();
    assert_eq!(a.fits, b.fits);
    assert_ne!(a.fits, c.fits);
}

#[test]
fn zero_volatility_paths_are_deterministic() {
    let mut model: ModelSpec = instance("M1").unwrap().model;
    model.sigma = Volatility::Scalar(0.0);
    model.x0 = Param::Scalar(40.0);
    let test = make_test_set(&model, "flat", 1000, 1).unwrap();
    let k = test.steps();
    let want = 40.0 * (model.r * model.dt * k as f64).exp();
    for row in test.at(k).iter_rows() {
        assert!((row[0] - want).abs() < 1e-9 * want);
    }
}

#[test]
fn swing_single_right_matches_layer_policy() {
    let (spec, design, method) = swing_config(2, 0.1);
    let fit = solve_swing_fixed(&spec, &design, &method, &RandomStream::new(2)).unwrap();
    let test = make_test_set(&spec.model, "swing", 3000, 6).unwrap();
    let one = swing_eval(&test, &fit, 1).unwrap();
    let layer = forward_eval(&test, &fit.layer(1).unwrap()).unwrap();
    assert!((one.price - layer.price).abs() < 1e-12);
    let two = swing_eval(&test, &fit, 2).unwrap();
    assert!(two.price > one.price);
    assert!(swing_eval(&test, &fit, 3).is_err());
}

#[test]
fn swing_refraction_beyond_horizon_adds_nothing() {
    let (spec, design, method) = swing_config(2, 1.0);
    let fit = solve_swing_fixed(&spec, &design, &method, &RandomStream::new(2)).unwrap();
    let test = make_test_set(&spec.model, "swing", 3000, 6).unwrap();
    let one = swing_eval(&test, &fit, 1).unwrap().price;
    let two = swing_eval(&test, &fit, 2).unwrap().price;
    assert!((two - one).abs() < 0.05 * one, "{one} {two}");
}

#[test]
fn swing_refraction_must_be_a_multiple_of_dt() {
    let (mut spec, _, _) = swing_config(2, 0.1);
    spec.refract = 0.07;
    assert!(spec.validate().is_err());
}

#[test]
fn american_price_dominates_european() {
    let inst = instance("M2").unwrap();
    let test = make_test_set(&inst.model, "M2", 5000, 12).unwrap();
    let fit = solve(&inst.model, &ls(8000), &RandomStream::new(3)).unwrap();
    let r = forward_eval(&test, &fit).unwrap();
    let eu = european_value(&test, &inst.model).unwrap();
    assert!(r.price > eu);
    assert!(r.ci95[0] < r.price && r.price < r.ci95[1]);
}
