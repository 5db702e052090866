//! Named device families and structural classifiers.
//!
//! Constructors for the devices used throughout the test corpus and the CLI
//! (Pauli instrument, X/Z measure-and-prepare family, trash-and-prepare,
//! sharp and noisy qubit POVMs) plus classifiers for measure-and-prepare,
//! indecomposable, rank-1, sharp, and trash-and-prepare structure.

use thiserror::Error;

use crate::compat::{check_compatible, CompatError};
use crate::devices::{
    measure_prepare_op, DeviceError, Instrument, Operation, Povm, State,
};
use crate::dilation::{canonical_dilation, complementary_instrument, DilationError};
use crate::linalg::{herm_eig, partial_trace, tensor, CMatrix, LinalgError, C64};
use crate::sdp::{SolveConfig, Status};
use crate::tol::{MP_TOL, RANK_TOL};

/// Errors from catalog constructors and classifiers.
#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("parameter out of range: {0}")]
    BadParameter(String),
    #[error("instrument is not indecomposable")]
    NotIndecomposable,
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Dilation(#[from] DilationError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Compat(#[from] CompatError),
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Pauli matrices σ_0 = I, σ_1 = X, σ_2 = Y, σ_3 = Z.
pub fn pauli(i: usize) -> CMatrix {
    match i {
        0 => CMatrix::identity(2),
        1 => CMatrix::from_rows(&[
            vec![c(0.0, 0.0), c(1.0, 0.0)],
            vec![c(1.0, 0.0), c(0.0, 0.0)],
        ]),
        2 => CMatrix::from_rows(&[
            vec![c(0.0, 0.0), c(0.0, -1.0)],
            vec![c(0.0, 1.0), c(0.0, 0.0)],
        ]),
        3 => CMatrix::from_rows(&[
            vec![c(1.0, 0.0), c(0.0, 0.0)],
            vec![c(0.0, 0.0), c(-1.0, 0.0)],
        ]),
        _ => panic!("pauli index must be 0..=3"),
    }
}

/// Four-outcome qubit instrument with operations ρ ↦ ¼ σ_i ρ σ_i.
pub fn pauli_instrument() -> Instrument {
    let outcomes = vec!["I".into(), "X".into(), "Y".into(), "Z".into()];
    let ops = (0..4)
        .map(|i| {
            Operation::from_kraus(vec![pauli(i).scale(0.5)], 2, 2)
                .expect("Pauli Kraus operators are valid")
        })
        .collect();
    Instrument::new(2, 2, outcomes, ops).expect("Pauli operations sum to a channel")
}

/// Sharp qubit Z-basis POVM {|0⟩⟨0|, |1⟩⟨1|} with outcomes "+","-".
pub fn sharp_qubit_z() -> Povm {
    let plus = CMatrix::identity(2).add(&pauli(3)).scale(0.5);
    let minus = CMatrix::identity(2).sub(&pauli(3)).scale(0.5);
    Povm::new(2, vec!["+".into(), "-".into()], vec![plus, minus])
        .expect("sharp Z projectors form a POVM")
}

/// Sharp qubit X-basis POVM {½(I±σ_X)} with outcomes "+","-".
pub fn sharp_qubit_x() -> Povm {
    let plus = CMatrix::identity(2).add(&pauli(1)).scale(0.5);
    let minus = CMatrix::identity(2).sub(&pauli(1)).scale(0.5);
    Povm::new(2, vec!["+".into(), "-".into()], vec![plus, minus])
        .expect("sharp X projectors form a POVM")
}

/// Trivial two-outcome qubit POVM {I/2, I/2}.
pub fn trivial_qubit_povm() -> Povm {
    let half = CMatrix::identity(2).scale(0.5);
    Povm::new(2, vec!["+".into(), "-".into()], vec![half.clone(), half])
        .expect("coin-flip effects form a POVM")
}

/// Noisy mixture of a POVM with the trivial one:
/// effects v·A(x) + (1−v)·tr(A(x))/d · I.
pub fn noisy_qubit_povm(a: &Povm, visibility: f64) -> Result<Povm, CatalogError> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(CatalogError::BadParameter(format!(
            "visibility {visibility} outside [0, 1]"
        )));
    }
    let d = a.dim_in() as f64;
    let effects = a
        .effects()
        .iter()
        .map(|e| {
            let w = e.trace().re / d;
            e.scale(visibility)
                .add(&CMatrix::identity(a.dim_in()).scale((1.0 - visibility) * w))
        })
        .collect();
    Ok(Povm::new(a.dim_in(), a.outcomes().to_vec(), effects)?)
}

/// The X/Z measure-and-prepare family: measures X (resp. Z) and prepares
/// ½(I ± a·σ_X) (resp. ½(I ± a·σ_Z)). Returns (I^a, J^a).
pub fn xz_map_instruments(a: f64) -> Result<(Instrument, Instrument), CatalogError> {
    if !(0.0..=1.0).contains(&a) {
        return Err(CatalogError::BadParameter(format!(
            "family parameter {a} outside [0, 1]"
        )));
    }
    let build = |sigma: CMatrix| -> Result<Instrument, CatalogError> {
        let eff_plus = CMatrix::identity(2).add(&sigma).scale(0.5);
        let eff_minus = CMatrix::identity(2).sub(&sigma).scale(0.5);
        let st_plus = State::new(CMatrix::identity(2).add(&sigma.scale(a)).scale(0.5))?;
        let st_minus = State::new(CMatrix::identity(2).sub(&sigma.scale(a)).scale(0.5))?;
        let ops = vec![
            measure_prepare_op(&eff_plus, &st_plus),
            measure_prepare_op(&eff_minus, &st_minus),
        ];
        Ok(Instrument::new(2, 2, vec!["+".into(), "-".into()], ops)?)
    };
    Ok((build(pauli(1))?, build(pauli(3))?))
}

/// Trash-and-prepare instrument I_x(ρ) = tr(ρ)·p_x·ξ_x.
pub fn trash_and_prepare(
    p: &[f64],
    xs: &[State],
    dim_in: usize,
) -> Result<Instrument, CatalogError> {
    if p.len() != xs.len() || p.is_empty() {
        return Err(CatalogError::BadParameter(
            "probability and state lists must have equal nonzero length".into(),
        ));
    }
    if p.iter().any(|&w| w < -1e-12) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CatalogError::BadParameter(
            "weights must form a probability vector".into(),
        ));
    }
    let dim_out = xs[0].dim();
    let ops = p
        .iter()
        .zip(xs)
        .map(|(&w, xi)| crate::devices::trash_prepare_op(w, xi, dim_in))
        .collect();
    let outcomes = (0..p.len()).map(|x| x.to_string()).collect();
    Ok(Instrument::new(dim_in, dim_out, outcomes, ops)?)
}

/// Structural classification of an instrument.
#[derive(Debug, Clone)]
pub struct DeviceClassReport {
    /// Every operation is of the form ρ ↦ tr(A(x)ρ)·ξ_x.
    pub is_measure_and_prepare: bool,
    /// Every nonzero operation has Choi rank 1.
    pub is_indecomposable: bool,
    /// Every induced effect has rank ≤ 1.
    pub is_rank1_povm: bool,
    /// Every induced effect is a projection.
    pub is_sharp: bool,
    /// Measure-and-prepare with a trivial (scalar) induced POVM.
    pub is_trash_and_prepare: bool,
    /// Induced POVM (the m&p measurement when `is_measure_and_prepare`).
    pub mp_povm: Povm,
    /// Prepared states per outcome; `None` for zero-probability outcomes.
    pub mp_states: Vec<Option<State>>,
    /// Largest Frobenius deviation ‖J(I_x) − A(x)ᵀ ⊗ ξ_x‖ over outcomes.
    pub mp_residual: f64,
}

fn choi_rank(choi: &CMatrix) -> Result<usize, LinalgError> {
    let (vals, _) = herm_eig(choi)?;
    Ok(vals.iter().filter(|&&v| v.abs() > RANK_TOL).count())
}

fn effect_rank(e: &CMatrix) -> Result<usize, LinalgError> {
    let (vals, _) = herm_eig(&e.hermitize())?;
    Ok(vals.iter().filter(|&&v| v.abs() > RANK_TOL).count())
}

/// Classify structural properties of an instrument. Zero-probability
/// outcomes count as both indecomposable and measure-and-prepare.
pub fn classify(ins: &Instrument) -> Result<DeviceClassReport, CatalogError> {
    let povm = ins.induced_povm();
    let (di, dout) = (ins.dim_in(), ins.dim_out());

    let mut is_mp = true;
    let mut is_indec = true;
    let mut residual: f64 = 0.0;
    let mut states = Vec::with_capacity(ins.n_outcomes());
    for (x, op) in ins.ops().iter().enumerate() {
        let choi = op.choi();
        if op.is_zero() {
            states.push(None);
            continue;
        }
        if choi_rank(choi)? > 1 {
            is_indec = false;
        }
        // Candidate prepared state ξ_x = tr_in J_x / tr J_x.
        let weight = choi.trace().re;
        let xi = partial_trace(choi, &[di, dout], &[1])?
            .scale(1.0 / weight)
            .hermitize();
        let rebuilt = tensor(&povm.effect(x).transpose(), &xi);
        let dev = choi.sub(&rebuilt).fnorm();
        residual = residual.max(dev);
        if dev > MP_TOL {
            is_mp = false;
            states.push(None);
        } else {
            let clipped = crate::linalg::psd_project(&xi)?;
            let t = clipped.trace().re.max(1e-300);
            states.push(Some(State::new(clipped.scale(1.0 / t))?));
        }
    }

    let mut is_rank1 = true;
    let mut is_sharp = true;
    let mut is_trash = is_mp;
    for e in povm.effects() {
        if effect_rank(e)? > 1 {
            is_rank1 = false;
        }
        let e2 = e.mul(e);
        if e2.sub(e).fnorm() > 1e-8 {
            is_sharp = false;
        }
        let w = e.trace().re / di as f64;
        if e.sub(&CMatrix::identity(di).scale(w)).fnorm() > 1e-8 {
            is_trash = false;
        }
    }

    Ok(DeviceClassReport {
        is_measure_and_prepare: is_mp,
        is_indecomposable: is_indec,
        is_rank1_povm: is_rank1,
        is_sharp,
        is_trash_and_prepare: is_trash,
        mp_povm: povm,
        mp_states: states,
        mp_residual: residual,
    })
}

/// Postprocessing equivalence of POVMs: the classical-relabeling LP succeeds
/// in both directions.
pub fn povm_pp_equivalent(a: &Povm, b: &Povm, cfg: &SolveConfig) -> Result<bool, CatalogError> {
    let fwd = crate::sdp::lp_postprocess_povm(a, b, cfg).map_err(CompatError::from)?;
    if fwd.verdict.status != Status::Feasible {
        return Ok(false);
    }
    let bwd = crate::sdp::lp_postprocess_povm(b, a, cfg).map_err(CompatError::from)?;
    Ok(bwd.verdict.status == Status::Feasible)
}

/// Canonical compatibility form of a device pair whose first member is
/// indecomposable: when FEASIBLE, J must act as
/// J_y(ρ) = Σ_x tr(ν_xy A^I(x) ρ) ξ_xy. Returns the conditional weights ν
/// (rows x, columns y) and the prepared states ξ_xy (None at zero weight).
pub fn indecomposable_compat_form(
    i: &Instrument,
    j: &Instrument,
    cfg: &SolveConfig,
) -> Result<Option<(Vec<Vec<f64>>, Vec<Vec<Option<State>>>)>, CatalogError> {
    let cls = classify(i)?;
    if !cls.is_indecomposable {
        return Err(CatalogError::NotIndecomposable);
    }
    let r = check_compatible(i, j, cfg)?;
    if r.verdict.status != Status::Feasible {
        return Ok(None);
    }
    // With the canonical dilation of an indecomposable instrument, I^C is a
    // measure-and-prepare device whose prepared "records" are the ancilla
    // basis states e_x; any processor branch R^{(x)}_y applied to e_x e_x†
    // yields the weight ν_xy·tr(A(x)ρ)-normalization and state ξ_xy.
    let dil = canonical_dilation(i)?;
    let ic = complementary_instrument(i, &dil)?;
    let pp = crate::compat::check_postprocessing(j, &ic, cfg)?;
    let procs = match pp.processors {
        Some(p) => p,
        None => return Ok(None),
    };
    let nx = i.n_outcomes();
    let ny = j.n_outcomes();
    let mut nu = vec![vec![0.0; ny]; nx];
    let mut states: Vec<Vec<Option<State>>> = vec![vec![None; ny]; nx];
    // Ancilla slot of outcome x in the canonical dilation (one Kraus per
    // nonzero operation; zero operations occupy no slot).
    let mut offset = 0usize;
    for x in 0..nx {
        if i.op(x).is_zero() {
            continue;
        }
        let mut ex = CMatrix::zeros(dil.dim_anc, dil.dim_anc);
        ex.set(offset, offset, C64::new(1.0, 0.0));
        offset += 1;
        for y in 0..ny {
            let out = procs[x].op(y).apply(&ex)?;
            let w = out.trace().re.max(0.0);
            nu[x][y] = w;
            if w > 1e-9 {
                let xi = crate::linalg::psd_project(&out.scale(1.0 / w).hermitize())?;
                let t = xi.trace().re;
                states[x][y] = Some(State::new(xi.scale(1.0 / t))?);
            }
        }
    }
    Ok(Some((nu, states)))
}

/// Rebuild J from the canonical compatibility form and report the largest
/// Choi deviation — used to validate `indecomposable_compat_form`.
pub fn rebuild_from_compat_form(
    i: &Instrument,
    j_shape: &Instrument,
    nu: &[Vec<f64>],
    states: &[Vec<Option<State>>],
) -> Result<f64, CatalogError> {
    let povm = i.induced_povm();
    let (di, dv) = (i.dim_in(), j_shape.dim_out());
    let mut worst: f64 = 0.0;
    for (y, op) in j_shape.ops().iter().enumerate() {
        let mut choi = CMatrix::zeros(di * dv, di * dv);
        for x in 0..povm.n_outcomes() {
            if let Some(xi) = &states[x][y] {
                let scaled = povm.effect(x).scale(nu[x][y]);
                choi = choi.add(&tensor(&scaled.transpose(), xi.matrix()));
            }
        }
        worst = worst.max(choi.sub(op.choi()).fnorm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::devices_equal;
    use crate::random;
    use crate::sdp::Status;

    fn cfg() -> SolveConfig {
        SolveConfig::default()
    }

    #[test]
    fn pauli_instrument_structure() {
        let p = pauli_instrument();
        assert_eq!(p.n_outcomes(), 4);
        // Induced POVM is trivial {I/4}.
        let povm = p.induced_povm();
        for e in povm.effects() {
            assert!(e.sub(&CMatrix::identity(2).scale(0.25)).fnorm() < 1e-12);
        }
        // Induced channel is trash-to-maximally-mixed: Choi = I₄/2.
        let ch = p.induced_channel();
        assert!(ch.op(0).choi().sub(&CMatrix::identity(4).scale(0.5)).fnorm() < 1e-12);
        // Each operation has a single Kraus operator.
        for op in p.ops() {
            assert_eq!(super::choi_rank(op.choi()).unwrap(), 1);
        }
    }

    #[test]
    fn xz_family_structure() {
        for &a in &[0.0, 0.5, 1.0] {
            let (i, j) = xz_map_instruments(a).unwrap();
            // Induced POVMs are sharp X and Z regardless of a.
            assert!(devices_equal(
                &i.induced_povm().as_instrument(),
                &sharp_qubit_x().as_instrument(),
                1e-10
            ));
            assert!(devices_equal(
                &j.induced_povm().as_instrument(),
                &sharp_qubit_z().as_instrument(),
                1e-10
            ));
        }
        // a = 1 prepares pure states.
        let (i, _) = xz_map_instruments(1.0).unwrap();
        let cls = classify(&i).unwrap();
        for st in cls.mp_states.iter().flatten() {
            let m = st.matrix();
            assert!(m.mul(m).sub(m).fnorm() < 1e-9, "prepared state not pure");
        }
        // a = 0 prepares I/2: trash-and-prepare on the state side but the
        // measurement is still X, so not trash overall.
        let (i, _) = xz_map_instruments(0.0).unwrap();
        let cls = classify(&i).unwrap();
        assert!(cls.is_measure_and_prepare);
        assert!(!cls.is_trash_and_prepare);

        assert!(xz_map_instruments(1.5).is_err());
    }

    #[test]
    fn trash_and_prepare_structure() {
        let mut rng = random::test_rng(31);
        let xs = vec![random::random_state(2, &mut rng), random::random_state(2, &mut rng)];
        let t = trash_and_prepare(&[0.3, 0.7], &xs, 2).unwrap();
        let povm = t.induced_povm();
        assert!(povm.effect(0).sub(&CMatrix::identity(2).scale(0.3)).fnorm() < 1e-10);
        let cls = classify(&t).unwrap();
        assert!(cls.is_trash_and_prepare && cls.is_measure_and_prepare);
        assert!(trash_and_prepare(&[0.5, 0.6], &xs, 2).is_err());
    }

    #[test]
    fn classify_known_cases() {
        // Lüders of sharp (rank-1) Z: indecomposable and m&p with pure states.
        let lud = sharp_qubit_z().luders().unwrap();
        let cls = classify(&lud).unwrap();
        assert!(cls.is_indecomposable);
        assert!(cls.is_measure_and_prepare);
        assert!(cls.is_rank1_povm && cls.is_sharp);
        for st in cls.mp_states.iter().flatten() {
            let m = st.matrix();
            assert!(m.mul(m).sub(m).fnorm() < 1e-9);
        }

        // Pauli instrument: indecomposable, NOT m&p.
        let cls = classify(&pauli_instrument()).unwrap();
        assert!(cls.is_indecomposable);
        assert!(!cls.is_measure_and_prepare);
        assert!(cls.mp_residual >= 0.1);

        // Lüders of a rank-2 effect POVM on C³: still indecomposable
        // (single Kraus per outcome), but the rank-2 effect breaks both the
        // rank-1 flag and the measure-and-prepare factorization.
        let p0 = CMatrix::diag(&[1.0, 1.0, 0.0]);
        let p1 = CMatrix::diag(&[0.0, 0.0, 1.0]);
        let povm = Povm::new(3, vec!["a".into(), "b".into()], vec![p0, p1]).unwrap();
        let cls = classify(&povm.luders().unwrap()).unwrap();
        assert!(!cls.is_measure_and_prepare);
        assert!(!cls.is_rank1_povm);
        assert!(cls.is_sharp);
        assert!(cls.is_indecomposable);

        // Identity channel: not m&p, indecomposable (rank-1 Choi).
        let cls = classify(&Instrument::identity(2)).unwrap();
        assert!(!cls.is_measure_and_prepare);
        assert!(cls.is_indecomposable);
    }

    #[test]
    fn luders_always_indecomposable() {
        // A single Kraus operator per outcome gives Choi rank 1, so every
        // Lüders instrument is indecomposable.
        let mut rng = random::test_rng(37);
        for _ in 0..5 {
            let povm = random::random_povm(2, 3, &mut rng);
            let lud = povm.luders().unwrap();
            assert!(classify(&lud).unwrap().is_indecomposable);
            for op in lud.ops() {
                assert_eq!(op.kraus().len(), 1);
            }
        }
    }

    #[test]
    fn pp_equivalence_cases() {
        let z = sharp_qubit_z();
        // Relabeled copy.
        let relabeled = Povm::new(
            2,
            vec!["b".into(), "a".into()],
            vec![z.effect(1).clone(), z.effect(0).clone()],
        )
        .unwrap();
        assert!(povm_pp_equivalent(&z, &relabeled, &cfg()).unwrap());

        // Noisy Z visibility 0.5 is strictly below sharp Z.
        let noisy = noisy_qubit_povm(&z, 0.5).unwrap();
        assert!(!povm_pp_equivalent(&z, &noisy, &cfg()).unwrap());

        // Splitting an outcome into two half-weight copies is equivalent.
        let split = Povm::new(
            2,
            vec!["0a".into(), "0b".into(), "1".into()],
            vec![
                z.effect(0).scale(0.5),
                z.effect(0).scale(0.5),
                z.effect(1).clone(),
            ],
        )
        .unwrap();
        assert!(povm_pp_equivalent(&z, &split, &cfg()).unwrap());
    }

    #[test]
    fn compat_form_extraction() {
        let lud = sharp_qubit_z().luders().unwrap();
        // Target: sharp Z as a POVM-instrument — ν should be identity-like.
        let zi = sharp_qubit_z().as_instrument();
        let form = indecomposable_compat_form(&lud, &zi, &cfg()).unwrap();
        let (nu, states) = form.expect("Z compatible with its Lüders instrument");
        let dev = rebuild_from_compat_form(&lud, &zi, &nu, &states).unwrap();
        assert!(dev < 1e-6, "rebuild deviation {dev}");
        assert!((nu[0][0] - 1.0).abs() < 1e-5 && nu[0][1] < 1e-5);

        // Sharp X is not compatible with the Z Lüders instrument.
        let xi = sharp_qubit_x().as_instrument();
        let form = indecomposable_compat_form(&lud, &xi, &cfg()).unwrap();
        assert!(form.is_none());

        // Classically flipped Z: ν is the binary symmetric channel.
        let p = 0.2;
        let z = sharp_qubit_z();
        let flipped = Povm::new(
            2,
            vec!["+".into(), "-".into()],
            vec![
                z.effect(0).scale(1.0 - p).add(&z.effect(1).scale(p)),
                z.effect(0).scale(p).add(&z.effect(1).scale(1.0 - p)),
            ],
        )
        .unwrap()
        .as_instrument();
        let (nu, states) = indecomposable_compat_form(&lud, &flipped, &cfg())
            .unwrap()
            .expect("flipped Z compatible");
        let dev = rebuild_from_compat_form(&lud, &flipped, &nu, &states).unwrap();
        assert!(dev < 1e-5, "rebuild deviation {dev}");
        assert!((nu[0][0] - 0.8).abs() < 1e-4, "nu00 {}", nu[0][0]);
        assert!((nu[0][1] - 0.2).abs() < 1e-4, "nu01 {}", nu[0][1]);

        // Requires indecomposability: a two-Kraus-per-outcome random
        // instrument has Choi rank 2 operations.
        let mut rng = random::test_rng(61);
        let decomposable = random::random_instrument(2, 2, 2, 2, &mut rng);
        assert!(matches!(
            indecomposable_compat_form(&decomposable, &zi, &cfg()),
            Err(CatalogError::NotIndecomposable)
        ));
    }

    #[test]
    fn mp_pair_compat_reduces_to_povms() {
        // For measure-and-prepare pairs, instrument compatibility matches
        // induced-POVM compatibility (both INFEASIBLE for the X/Z family).
        let (i, j) = xz_map_instruments(0.5).unwrap();
        let r = check_compatible(&i, &j, &cfg()).unwrap();
        let povm_r = check_compatible(
            &i.induced_povm().as_instrument(),
            &j.induced_povm().as_instrument(),
            &cfg(),
        )
        .unwrap();
        assert_eq!(r.verdict.status, Status::Infeasible);
        assert_eq!(r.verdict.status, povm_r.verdict.status);
    }

    #[test]
    fn noisy_povm_bounds() {
        let z = sharp_qubit_z();
        let n0 = noisy_qubit_povm(&z, 0.0).unwrap();
        for e in n0.effects() {
            assert!(e.sub(&CMatrix::identity(2).scale(0.5)).fnorm() < 1e-12);
        }
        let n1 = noisy_qubit_povm(&z, 1.0).unwrap();
        assert!(devices_equal(&n1.as_instrument(), &z.as_instrument(), 1e-12));
        assert!(noisy_qubit_povm(&z, 1.2).is_err());
    }
}
