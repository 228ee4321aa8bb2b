use porous_reflect::basis::{Basis, Norm, SpectralField, Spectrum};
use porous_reflect::config::RunConfig;
use porous_reflect::model::{PenaltySpec, PhiSpec, PsiSpec};
use porous_reflect::noise::{NoisePath, NoiseSpec};
use porous_reflect::solver::{InitialCondition, Model, Scheme, Solver, SolverConfig, Trajectory};
use proptest::prelude::*;

fn cubic(penalty: f64, noise: NoiseSpec) -> Model {
    Model {
        psi: PsiSpec::power(3.0, 1.0, 0.0).unwrap(),
        phi: PhiSpec::zero(),
        penalty: if penalty > 0.0 { PenaltySpec::new(penalty).unwrap() } else { PenaltySpec::off() },
        noise,
    }
}

/// Each step sums `refine` increments of the fine Brownian path.
fn run(basis: &Basis, model: &Model, dt: f64, t_end: f64, scheme: Scheme, x0: &SpectralField, refine: u64) -> Trajectory {
    let cfg = SolverConfig { dt, t_end, scheme, record_every: 1, ..SolverConfig::default() };
    let solver = Solver::new(basis, model.clone(), cfg).unwrap();
    let noise = NoisePath::new(&model.noise, basis.n_modes(), 0, dt / refine as f64, refine).unwrap();
    solver.simulate(x0, &noise).unwrap()
}

#[test]
fn noiseless_cubic_l2_is_nonincreasing() {
    let basis = Basis::lattice(24).unwrap();
    let x0 = InitialCondition::Bump { center: 0.5, width: 0.3, amplitude: 1.0 }.build(&basis, true).unwrap();
    let tr = run(&basis, &cubic(0.0, NoiseSpec::silent(1)), 1e-3, 0.5, Scheme::ImplicitNodal, &x0, 1);
    for w in tr.samples.windows(2) {
        assert!(w[1].diag.l2 <= w[0].diag.l2 + 1e-14, "{} -> {}", w[0].diag.l2, w[1].diag.l2);
    }
}

#[test]
fn noiseless_reflection_keeps_nonnegative_data_nonnegative() {
    let basis = Basis::lattice(24).unwrap();
    let x0 = InitialCondition::Mode { k: 3, amplitude: 0.5 }.build(&basis, true).unwrap();
    let tr = run(&basis, &cubic(1e4, NoiseSpec::silent(1)), 1e-3, 0.2, Scheme::ImplicitNodal, &x0, 1);
    for s in &tr.samples {
        let min = s.grid.values().iter().cloned().fold(f64::MAX, f64::min);
        assert!(min >= -1e-8, "t={} min={min}", s.t);
    }
}

#[test]
fn implicit_scheme_self_converges_at_first_order() {
    let basis = Basis::lattice(16).unwrap();
    let model = cubic(1e2, NoiseSpec::power(0.3, 1.0, 5).unwrap());
    let x0 = InitialCondition::Mode { k: 1, amplitude: 0.3 }.build(&basis, true).unwrap();
    let fine = run(&basis, &model, 2.5e-4, 0.1, Scheme::ImplicitNodal, &x0, 1);
    let fine = &fine.last().x;
    let err = |dt: f64, refine: u64| {
        let tr = run(&basis, &model, dt, 0.1, Scheme::ImplicitNodal, &x0, refine);
        let mut d = tr.last().x.clone();
        d.axpy(-1.0, fine);
        basis.norm(&d, Norm::L2).unwrap()
    };
    let e1 = err(2e-3, 8);
    let e2 = err(1e-3, 4);
    // additive noise: backward Euler is strongly first order
    let ratio = e1 / e2;
    assert!((1.5..2.6).contains(&ratio), "errors {e1:.3e} {e2:.3e}");
}

#[test]
fn imex_and_nodal_agree_for_linear_psi_without_penalty() {
    let basis = Basis::lattice(16).unwrap();
    let model = Model { psi: PsiSpec::linear(1.0).unwrap(), phi: PhiSpec::linear(-0.5), penalty: PenaltySpec::off(), noise: NoiseSpec::silent(1) };
    let x0 = SpectralField::mode(16, 2, 1.0);
    let a = run(&basis, &model, 1e-4, 0.05, Scheme::ImexLinear, &x0, 1);
    let b = run(&basis, &model, 1e-4, 0.05, Scheme::ImplicitNodal, &x0, 1);
    let mut d = a.last().x.clone();
    d.axpy(-1.0, &b.last().x);
    assert!(d.coeffs().iter().all(|c| c.abs() < 1e-3), "{:?}", d.coeffs());
}

fn arb_config() -> impl Strategy<Value = String> {
    (
        2usize..20,
        prop_oneof![Just(Spectrum::Continuum), Just(Spectrum::Lattice)],
        1.0f64..4.0,
        0.1f64..3.0,
        any::<u64>(),
        prop_oneof![Just("explicit"), Just("imex-linear"), Just("imex-linear+implicit-penalty")],
        proptest::collection::vec(0.0f64..2.0, 1..5),
    )
        .prop_map(|(m, spectrum, r, a1, seed, scheme, q)| {
            let grid = if spectrum == Spectrum::Lattice { m } else { 2 * m + 1 };
            let q: Vec<String> = q.iter().map(|v| format!("{v:?}")).collect();
            format!(
                "[basis]\nn_modes = {m}\nn_grid = {grid}\nspectrum = {spectrum}\n[psi]\nr = {r:?}\nalpha1 = {a1:?}\n\
                 [noise]\nmaster_seed = {seed}\namplitudes = explicit\nq = {}\n[solver]\ndt = 1e-3\nt_end = 0.5\nscheme = {scheme}\n",
                q.join(",")
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_text_round_trips(text in arb_config()) {
        let a = RunConfig::parse(&text).unwrap();
        let b = RunConfig::parse(&a.to_text()).unwrap();
        prop_assert_eq!(a.hash(), b.hash());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn spectral_grid_round_trip(coeffs in proptest::collection::vec(-3.0f64..3.0, 1..24)) {
        let m = coeffs.len();
        let basis = Basis::lattice(m).unwrap();
        let mut x = basis.zeros_spectral();
        x.coeffs_mut().copy_from_slice(&coeffs);
        let back = basis.to_spectral(&basis.to_grid(&x).unwrap()).unwrap();
        for (a, b) in back.coeffs().iter().zip(&coeffs) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
