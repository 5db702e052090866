//! Deciders for device relations: compatibility (all device-type pairs),
//! instrument postprocessing, compatibility via complementary instruments,
//! the Jordan-product channel test, and non-disturbance.
//!
//! Every decider reduces to a [`FeasibilityProblem`] over Choi blocks.
//! POVMs participate as instruments with one-dimensional output and channels
//! as one-outcome instruments, so a single pair of marginal-constraint
//! builders covers every device-type combination.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::{
    marginal, DeviceError, Instrument, Operation, Povm, QChannel, Side,
};
use crate::dilation::{canonical_dilation, complementary_instrument, DilationError};
use crate::linalg::{herm_eig, partial_trace, psd_project, sqrt_psd, tensor, CMatrix, LinalgError, C64};
use crate::sdp::{
    lp_postprocess_povm, BlockMap, FeasibilityProblem, LpPostprocess, SolveConfig, SolveError,
    Status, Verdict,
};

/// Errors raised by the deciders.
#[derive(Debug, Error)]
pub enum CompatError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Dilation(#[from] DilationError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Which reduction produced a compatibility verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    #[serde(rename = "DIRECT_SDP")]
    DirectSdp,
    #[serde(rename = "VIA_COMPLEMENTARY")]
    ViaComplementary,
    #[serde(rename = "JORDAN_PRODUCT")]
    JordanProduct,
    #[serde(rename = "LP_CLASSICAL")]
    LpClassical,
}

impl std::fmt::Display for Route {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Route::DirectSdp => write!(f, "DIRECT_SDP"),
            Route::ViaComplementary => write!(f, "VIA_COMPLEMENTARY"),
            Route::JordanProduct => write!(f, "JORDAN_PRODUCT"),
            Route::LpClassical => write!(f, "LP_CLASSICAL"),
        }
    }
}

/// Outcome of a compatibility check.
#[derive(Debug, Clone)]
pub struct CompatReport {
    pub verdict: Verdict,
    /// Joint instrument with outcomes "x|y" and output K ⊗ V, present on
    /// FEASIBLE verdicts when a joint could be assembled from the witness.
    pub joint: Option<Instrument>,
    pub route: Route,
}

/// Outcome of a postprocessing check `target ⪯ source`.
#[derive(Debug, Clone)]
pub struct PostprocessReport {
    pub verdict: Verdict,
    /// One processor instrument R^{(s)} per source outcome, each with the
    /// target's outcome set, such that target_t = Σ_s R^{(s)}_t ∘ source_s.
    pub processors: Option<Vec<Instrument>>,
}

fn require_equal_inputs(a: usize, b: usize) -> Result<(), CompatError> {
    if a != b {
        return Err(CompatError::DimMismatch(format!(
            "devices act on different input spaces ({a} vs {b})"
        )));
    }
    Ok(())
}

/// Inverse square root with an eigenvalue floor, used to renormalize witness
/// devices whose totals deviate from the identity at solver precision.
fn inv_sqrt_floor(m: &CMatrix) -> Result<CMatrix, CompatError> {
    let (vals, vecs) = herm_eig(m)?;
    let d = m.rows();
    let mut out = CMatrix::zeros(d, d);
    for (k, &l) in vals.iter().enumerate() {
        let f = 1.0 / l.max(1e-12).sqrt();
        for i in 0..d {
            for j in 0..d {
                out.add_at(i, j, vecs.at(i, k) * vecs.at(j, k).conj() * f);
            }
        }
    }
    Ok(out)
}

/// Build a valid instrument from witness Choi blocks: clip tiny negative
/// eigenvalues, then renormalize the channel condition by an input-side
/// sandwich with (tr_out Σ J)^{-1/2}.
fn instrument_from_witness(
    chois: &[CMatrix],
    dim_in: usize,
    dim_out: usize,
    outcomes: Vec<String>,
) -> Result<Instrument, CompatError> {
    let clipped: Vec<CMatrix> = chois
        .iter()
        .map(|c| psd_project(&c.hermitize()))
        .collect::<Result<_, _>>()?;
    let mut total = CMatrix::zeros(dim_in * dim_out, dim_in * dim_out);
    for c in &clipped {
        total = total.add(c);
    }
    let t = partial_trace(&total, &[dim_in, dim_out], &[0])?.hermitize();
    let s = inv_sqrt_floor(&t)?;
    let l = tensor(&s, &CMatrix::identity(dim_out));
    let ops = clipped
        .into_iter()
        .map(|c| {
            let fixed = l.mul(&c).mul(&l.adjoint()).hermitize();
            Operation::from_choi_with_tol(fixed, dim_in, dim_out, 100.0)
        })
        .collect::<Result<Vec<_>, DeviceError>>()?;
    Ok(Instrument::new_with_tol(dim_in, dim_out, outcomes, ops, 1e-6)?)
}

// ---------------------------------------------------------------------------
// Compatibility (parallel joint device)
// ---------------------------------------------------------------------------

/// Decide compatibility of two instruments by the direct joint-device SDP:
/// PSD blocks C_(x,y) on H_in ⊗ K ⊗ V with marginal constraints
/// Σ_y tr_V C_(x,y) = J(I_x) and Σ_x tr_K C_(x,y) = J(J_y).
pub fn check_compatible(
    i: &Instrument,
    j: &Instrument,
    cfg: &SolveConfig,
) -> Result<CompatReport, CompatError> {
    require_equal_inputs(i.dim_in(), j.dim_in())?;
    let (di, dk, dv) = (i.dim_in(), i.dim_out(), j.dim_out());
    let (nx, ny) = (i.n_outcomes(), j.n_outcomes());
    let block_dim = di * dk * dv;

    let mut labels = Vec::with_capacity(nx * ny);
    for xl in i.outcomes() {
        for yl in j.outcomes() {
            labels.push(format!("{xl}|{yl}"));
        }
    }
    let mut problem = FeasibilityProblem::new(
        labels.iter().map(|l| (l.clone(), block_dim)).collect(),
    );
    for (x, xl) in i.outcomes().iter().enumerate() {
        let terms = (0..ny)
            .map(|y| {
                (
                    x * ny + y,
                    BlockMap::PartialTrace {
                        dims: vec![di, dk, dv],
                        keep: vec![0, 1],
                    },
                )
            })
            .collect();
        problem.add_constraint(format!("marginal-i[{xl}]"), terms, i.op(x).choi().clone())?;
    }
    for (y, yl) in j.outcomes().iter().enumerate() {
        let terms = (0..nx)
            .map(|x| {
                (
                    x * ny + y,
                    BlockMap::PartialTrace {
                        dims: vec![di, dk, dv],
                        keep: vec![0, 2],
                    },
                )
            })
            .collect();
        problem.add_constraint(format!("marginal-j[{yl}]"), terms, j.op(y).choi().clone())?;
    }

    let verdict = problem.solve(cfg)?;
    let joint = match (&verdict.status, &verdict.witness) {
        (Status::Feasible, Some(w)) => {
            let ins = instrument_from_witness(w, di, dk * dv, labels)?
                .with_output_factors(dk, dv)?;
            Some(ins)
        }
        _ => None,
    };
    Ok(CompatReport {
        verdict,
        joint,
        route: Route::DirectSdp,
    })
}

/// Traditional compatibility: both instruments share one output space and the
/// joint marginals are plain outcome sums, Σ_x G_(x,y) = J_y and
/// Σ_y G_(x,y) = I_x.
pub fn check_compatible_traditional(
    i: &Instrument,
    j: &Instrument,
    cfg: &SolveConfig,
) -> Result<CompatReport, CompatError> {
    require_equal_inputs(i.dim_in(), j.dim_in())?;
    if i.dim_out() != j.dim_out() {
        return Err(CompatError::DimMismatch(format!(
            "traditional compatibility requires equal output spaces ({} vs {})",
            i.dim_out(),
            j.dim_out()
        )));
    }
    let (di, dout) = (i.dim_in(), i.dim_out());
    let (nx, ny) = (i.n_outcomes(), j.n_outcomes());
    let mut labels = Vec::new();
    for xl in i.outcomes() {
        for yl in j.outcomes() {
            labels.push(format!("{xl}|{yl}"));
        }
    }
    let mut problem = FeasibilityProblem::new(
        labels.iter().map(|l| (l.clone(), di * dout)).collect(),
    );
    for (x, xl) in i.outcomes().iter().enumerate() {
        let terms = (0..ny).map(|y| (x * ny + y, BlockMap::Identity)).collect();
        problem.add_constraint(format!("sum-i[{xl}]"), terms, i.op(x).choi().clone())?;
    }
    for (y, yl) in j.outcomes().iter().enumerate() {
        let terms = (0..nx).map(|x| (x * ny + y, BlockMap::Identity)).collect();
        problem.add_constraint(format!("sum-j[{yl}]"), terms, j.op(y).choi().clone())?;
    }
    let verdict = problem.solve(cfg)?;
    let joint = match (&verdict.status, &verdict.witness) {
        (Status::Feasible, Some(w)) => {
            Some(instrument_from_witness(w, di, dout, labels)?)
        }
        _ => None,
    };
    Ok(CompatReport {
        verdict,
        joint,
        route: Route::DirectSdp,
    })
}

// ---------------------------------------------------------------------------
// Instrument postprocessing
// ---------------------------------------------------------------------------

/// Decide `target ⪯ source`: existence of processor instruments R^{(s)}
/// (one per source outcome s, outcome set = target outcomes) with
/// target_t = Σ_s R^{(s)}_t ∘ source_s.
pub fn check_postprocessing(
    target: &Instrument,
    source: &Instrument,
    cfg: &SolveConfig,
) -> Result<PostprocessReport, CompatError> {
    require_equal_inputs(target.dim_in(), source.dim_in())?;
    let di = source.dim_in();
    let dks = source.dim_out();
    let dvt = target.dim_out();
    let (ns, nt) = (source.n_outcomes(), target.n_outcomes());
    let block_dim = dks * dvt;

    let mut names = Vec::new();
    for sl in source.outcomes() {
        for tl in target.outcomes() {
            names.push(format!("R[{sl}->{tl}]"));
        }
    }
    let mut problem =
        FeasibilityProblem::new(names.iter().map(|l| (l.clone(), block_dim)).collect());
    // Reconstruction: Σ_s (R^{(s)}_t ∘ source_s) = target_t.
    for (t, tl) in target.outcomes().iter().enumerate() {
        let terms = (0..ns)
            .map(|s| {
                (
                    s * nt + t,
                    BlockMap::ComposeAfter {
                        first: source.op(s).choi().clone(),
                        dims: [di, dks, dvt],
                    },
                )
            })
            .collect();
        problem.add_constraint(
            format!("rebuild[{tl}]"),
            terms,
            target.op(t).choi().clone(),
        )?;
    }
    // Each processor is an instrument: Σ_t tr_out R^{(s)}_t = I.
    for (s, sl) in source.outcomes().iter().enumerate() {
        let terms = (0..nt)
            .map(|t| {
                (
                    s * nt + t,
                    BlockMap::PartialTrace {
                        dims: vec![dks, dvt],
                        keep: vec![0],
                    },
                )
            })
            .collect();
        problem.add_constraint(
            format!("channel[{sl}]"),
            terms,
            CMatrix::identity(dks),
        )?;
    }

    let verdict = problem.solve(cfg)?;
    let processors = match (&verdict.status, &verdict.witness) {
        (Status::Feasible, Some(w)) => {
            let mut list = Vec::with_capacity(ns);
            for s in 0..ns {
                let chois: Vec<CMatrix> =
                    (0..nt).map(|t| w[s * nt + t].clone()).collect();
                list.push(instrument_from_witness(
                    &chois,
                    dks,
                    dvt,
                    target.outcomes().to_vec(),
                )?);
            }
            Some(list)
        }
        _ => None,
    };
    Ok(PostprocessReport { verdict, processors })
}

// ---------------------------------------------------------------------------
// Compatibility via complementary instruments
// ---------------------------------------------------------------------------

/// Permutation matrix swapping tensor factors: (v, k) ↦ (k, v).
fn swap_matrix(dv: usize, dk: usize) -> CMatrix {
    let mut p = CMatrix::zeros(dv * dk, dv * dk);
    for v in 0..dv {
        for k in 0..dk {
            p.set(k * dv + v, v * dk + k, C64::new(1.0, 0.0));
        }
    }
    p
}

/// Decide compatibility through the main theorem: I and J are compatible iff
/// J ⪯ I^C for the complementary of any dilation of I. Uses the canonical
/// dilation; on FEASIBLE the explicit joint
/// G_(x,y)(ρ) = (R^{(x)}_y ⊗ id_K)((√E(x) ⊗ I) W ρ W† (√E(x) ⊗ I))
/// is assembled and its marginals verified.
pub fn check_compatible_via_complementary(
    i: &Instrument,
    j: &Instrument,
    cfg: &SolveConfig,
) -> Result<CompatReport, CompatError> {
    require_equal_inputs(i.dim_in(), j.dim_in())?;
    let dil = canonical_dilation(i)?;
    let ic = complementary_instrument(i, &dil)?;
    let pp = check_postprocessing(j, &ic, cfg)?;

    let (di, dk, dv) = (i.dim_in(), i.dim_out(), j.dim_out());
    let joint = match (&pp.verdict.status, &pp.processors) {
        (Status::Feasible, Some(procs)) => {
            let swap = swap_matrix(dv, dk);
            let mut labels = Vec::new();
            let mut chois = Vec::new();
            for (x, xl) in i.outcomes().iter().enumerate() {
                // V_x = (√E(x) ⊗ I_K) W : H → A ⊗ K.
                let se = sqrt_psd(&dil.e.effect(x).hermitize())?;
                let vx = tensor(&se, &CMatrix::identity(dk)).mul(&dil.w);
                for (y, yl) in j.outcomes().iter().enumerate() {
                    let mut kraus = Vec::new();
                    for s in procs[x].op(y).kraus() {
                        // (S ⊗ I_K) maps A ⊗ K → V ⊗ K; swap to K ⊗ V.
                        let k = swap.mul(&tensor(s, &CMatrix::identity(dk))).mul(&vx);
                        kraus.push(k);
                    }
                    labels.push(format!("{xl}|{yl}"));
                    chois.push(crate::devices::choi_from_kraus(&kraus, di, dk * dv));
                }
            }
            let ins = instrument_from_witness(&chois, di, dk * dv, labels)?
                .with_output_factors(dk, dv)?;
            // Verify the constructed joint actually reproduces both inputs.
            let mi = marginal(&ins, Side::First)?;
            let mj = marginal(&ins, Side::Second)?;
            let dev = marginal_deviation(&mi, i).max(marginal_deviation(&mj, j));
            if dev <= 1e-5 {
                Some(ins)
            } else {
                None
            }
        }
        _ => None,
    };
    Ok(CompatReport {
        verdict: pp.verdict,
        joint,
        route: Route::ViaComplementary,
    })
}

/// Largest Choi-block deviation between two instruments with the same
/// outcome set (∞ if shapes differ).
pub fn marginal_deviation(a: &Instrument, b: &Instrument) -> f64 {
    if a.dim_in() != b.dim_in()
        || a.dim_out() != b.dim_out()
        || a.outcomes() != b.outcomes()
    {
        return f64::INFINITY;
    }
    a.ops()
        .iter()
        .zip(b.ops())
        .map(|(x, y)| x.choi().sub(y.choi()).fnorm())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// POVM–POVM sandwich form
// ---------------------------------------------------------------------------

/// Decide POVM compatibility through the sandwich form: A and B are
/// compatible iff there are POVMs R^{(x)} with
/// B(y) = Σ_x √A(x) R^{(x)}(y) √A(x).
pub fn check_povm_povm_sandwich(
    a: &Povm,
    b: &Povm,
    cfg: &SolveConfig,
) -> Result<CompatReport, CompatError> {
    require_equal_inputs(a.dim_in(), b.dim_in())?;
    let d = a.dim_in();
    let (nx, ny) = (a.n_outcomes(), b.n_outcomes());
    let roots: Vec<CMatrix> = a
        .effects()
        .iter()
        .map(|e| sqrt_psd(&e.hermitize()))
        .collect::<Result<_, _>>()?;

    let mut names = Vec::new();
    for xl in a.outcomes() {
        for yl in b.outcomes() {
            names.push(format!("R[{xl}]({yl})"));
        }
    }
    let mut problem = FeasibilityProblem::new(names.iter().map(|l| (l.clone(), d)).collect());
    for (x, xl) in a.outcomes().iter().enumerate() {
        let terms = (0..ny).map(|y| (x * ny + y, BlockMap::Identity)).collect();
        problem.add_constraint(format!("povm[{xl}]"), terms, CMatrix::identity(d))?;
    }
    for (y, yl) in b.outcomes().iter().enumerate() {
        let terms = (0..nx)
            .map(|x| {
                (
                    x * ny + y,
                    BlockMap::Sandwich {
                        left: roots[x].clone(),
                    },
                )
            })
            .collect();
        problem.add_constraint(format!("sandwich[{yl}]"), terms, b.effect(y).hermitize())?;
    }

    let verdict = problem.solve(cfg)?;
    let joint = match (&verdict.status, &verdict.witness) {
        (Status::Feasible, Some(w)) => {
            // Joint POVM G(x,y) = √A(x) R^{(x)}(y) √A(x), as an instrument
            // with one-dimensional output (Choi = Gᵀ).
            let mut labels = Vec::new();
            let mut chois = Vec::new();
            for (x, xl) in a.outcomes().iter().enumerate() {
                for (y, yl) in b.outcomes().iter().enumerate() {
                    labels.push(format!("{xl}|{yl}"));
                    let g = roots[x].mul(&w[x * ny + y]).mul(&roots[x]);
                    chois.push(g.transpose());
                }
            }
            let ins = instrument_from_witness(&chois, d, 1, labels)?
                .with_output_factors(1, 1)?;
            Some(ins)
        }
        _ => None,
    };
    Ok(CompatReport {
        verdict,
        joint,
        route: Route::ViaComplementary,
    })
}

// ---------------------------------------------------------------------------
// Jordan product of channels
// ---------------------------------------------------------------------------

/// Choi matrix of the Jordan product Φ ⊙ Ψ on H ⊗ K ⊗ V:
/// J = Σ_{ijkl} (E_ij ⊙ E_kl) ⊗ Φ(E_ij) ⊗ Ψ(E_kl) with the symmetrized
/// product X ⊙ Y = (XY + YX)/2. Its partial traces always reproduce the two
/// Choi marginals; positivity certifies compatibility with joint Φ ⊙ Ψ.
pub fn jordan_product_choi(phi: &QChannel, psi: &QChannel) -> Result<CMatrix, CompatError> {
    require_equal_inputs(phi.dim_in(), psi.dim_in())?;
    let d = phi.dim_in();
    let (dk, dv) = (phi.dim_out(), psi.dim_out());

    let unit = |i: usize, j: usize| {
        let mut m = CMatrix::zeros(d, d);
        m.set(i, j, C64::new(1.0, 0.0));
        m
    };
    // Precompute Φ(E_ij) and Ψ(E_kl).
    let mut phi_im = Vec::with_capacity(d * d);
    let mut psi_im = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            phi_im.push(phi.op(0).apply(&unit(i, j))?);
            psi_im.push(psi.op(0).apply(&unit(i, j))?);
        }
    }

    let dim = d * dk * dv;
    let mut out = CMatrix::zeros(dim, dim);
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                for l in 0..d {
                    // E_ij ⊙ E_kl = (δ_jk E_il + δ_li E_kj)/2.
                    let mut first = CMatrix::zeros(d, d);
                    if j == k {
                        first.add_at(i, l, C64::new(0.5, 0.0));
                    }
                    if l == i {
                        first.add_at(k, j, C64::new(0.5, 0.0));
                    }
                    if first.max_abs() == 0.0 {
                        continue;
                    }
                    let term = tensor(
                        &tensor(&first, &phi_im[i * d + j]),
                        &psi_im[k * d + l],
                    );
                    out = out.add(&term);
                }
            }
        }
    }
    Ok(out.hermitize())
}

/// Compatibility probe through the Jordan product: a PSD Jordan Choi matrix
/// certifies FEASIBLE (the Jordan product itself is a joint channel); a
/// negative eigenvalue alone proves nothing, so the verdict is UNDECIDED
/// with the minimum eigenvalue as margin.
pub fn check_compatible_jordan(
    phi: &QChannel,
    psi: &QChannel,
    cfg: &SolveConfig,
) -> Result<CompatReport, CompatError> {
    let jp = jordan_product_choi(phi, psi)?;
    let me = crate::linalg::min_eig(&jp)?;
    if me >= -cfg.feas_tol {
        let (dk, dv) = (phi.dim_out(), psi.dim_out());
        let label = format!("{}|{}", phi.outcomes()[0], psi.outcomes()[0]);
        let joint = instrument_from_witness(&[jp], phi.dim_in(), dk * dv, vec![label])?
            .with_output_factors(dk, dv)?;
        Ok(CompatReport {
            verdict: Verdict {
                status: Status::Feasible,
                witness: None,
                margin: me,
                iterations: 0,
            },
            joint: Some(joint),
            route: Route::JordanProduct,
        })
    } else {
        Ok(CompatReport {
            verdict: Verdict {
                status: Status::Undecided,
                witness: None,
                margin: me,
                iterations: 0,
            },
            joint: None,
            route: Route::JordanProduct,
        })
    }
}

// ---------------------------------------------------------------------------
// Non-disturbance
// ---------------------------------------------------------------------------

/// Exact non-disturbance of a fixed instrument `i` on `j`: Choi-level
/// equality J_y ∘ Φ^I = J_y for every outcome y.
pub fn check_nondisturbance_exact(i: &Instrument, j: &Instrument) -> Result<bool, CompatError> {
    if i.dim_in() != i.dim_out() {
        return Err(CompatError::DimMismatch(
            "non-disturbance requires a square (dim_in = dim_out) first instrument".into(),
        ));
    }
    require_equal_inputs(i.dim_in(), j.dim_in())?;
    let phi = i.induced_channel();
    for y in 0..j.n_outcomes() {
        let seq = crate::devices::compose(j.op(y), phi.op(0))?;
        if seq.choi().sub(j.op(y).choi()).fnorm() > 1e-8 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Decide whether *some* instrument implementing the POVM `a` leaves `j`
/// undisturbed: feasibility over square operation blocks I_x with
/// induced-POVM constraints tr_out J(I_x) = A(x)ᵀ and the non-disturbance
/// conditions J_y ∘ (Σ_x I_x) = J_y.
pub fn check_povm_nondisturbance(
    a: &Povm,
    j: &Instrument,
    cfg: &SolveConfig,
) -> Result<Verdict, CompatError> {
    require_equal_inputs(a.dim_in(), j.dim_in())?;
    let d = a.dim_in();
    let nx = a.n_outcomes();
    let mut problem = FeasibilityProblem::new(
        a.outcomes()
            .iter()
            .map(|l| (format!("I[{l}]"), d * d))
            .collect(),
    );
    for (x, xl) in a.outcomes().iter().enumerate() {
        problem.add_constraint(
            format!("povm[{xl}]"),
            vec![(
                x,
                BlockMap::PartialTrace {
                    dims: vec![d, d],
                    keep: vec![0],
                },
            )],
            a.effect(x).transpose().hermitize(),
        )?;
    }
    for (y, yl) in j.outcomes().iter().enumerate() {
        let terms = (0..nx)
            .map(|x| {
                (
                    x,
                    BlockMap::ComposeBefore {
                        second: j.op(y).choi().clone(),
                        dims: [d, d, j.dim_out()],
                    },
                )
            })
            .collect();
        problem.add_constraint(format!("nd[{yl}]"), terms, j.op(y).choi().clone())?;
    }
    Ok(problem.solve(cfg)?)
}

/// Classical postprocessing relation between POVMs, re-exported at the
/// decider level for route selection.
pub fn check_povm_postprocessing(
    a: &Povm,
    b: &Povm,
    cfg: &SolveConfig,
) -> Result<LpPostprocess, CompatError> {
    Ok(lp_postprocess_povm(a, b, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::devices::devices_equal;
    use crate::random;

    fn cfg() -> SolveConfig {
        SolveConfig::default()
    }

    #[test]
    fn identity_channels_incompatible() {
        let id = Instrument::identity(2);
        let r = check_compatible(&id, &id, &cfg()).unwrap();
        assert_eq!(r.verdict.status, Status::Infeasible);
        assert!(r.verdict.margin > 1e-4, "margin {}", r.verdict.margin);
    }

    #[test]
    fn trash_and_prepare_compatible_with_anything() {
        let mut rng = random::test_rng(107);
        let trash = catalog::trash_and_prepare(
            &[0.4, 0.6],
            &[random::random_state(2, &mut rng), random::random_state(2, &mut rng)],
            2,
        )
        .unwrap();
        let j = random::random_instrument(2, 2, 2, 1, &mut rng);
        let r = check_compatible(&trash, &j, &cfg()).unwrap();
        assert_eq!(r.verdict.status, Status::Feasible);
        let joint = r.joint.unwrap();
        let mj = marginal(&joint, Side::Second).unwrap();
        assert!(marginal_deviation(&mj, &j) < 1e-5);
    }

    #[test]
    fn sharp_z_self_compatible() {
        let z = catalog::sharp_qubit_z().as_instrument();
        let r = check_compatible(&z, &z, &cfg()).unwrap();
        assert_eq!(r.verdict.status, Status::Feasible);
    }

    #[test]
    fn sharp_x_z_incompatible() {
        let z = catalog::sharp_qubit_z().as_instrument();
        let x = catalog::sharp_qubit_x().as_instrument();
        let r = check_compatible(&z, &x, &cfg()).unwrap();
        assert_eq!(r.verdict.status, Status::Infeasible);
    }

    #[test]
    fn direct_joint_marginals_match() {
        // FEASIBLE + DIRECT_SDP ⇒ the assembled joint has the inputs as
        // marginals.
        let z = catalog::sharp_qubit_z();
        let noisy = catalog::noisy_qubit_povm(&z, 0.5).unwrap();
        let a = z.as_instrument();
        let b = noisy.as_instrument();
        let r = check_compatible(&a, &b, &cfg()).unwrap();
        assert_eq!(r.verdict.status, Status::Feasible);
        let joint = r.joint.unwrap();
        let ma = marginal(&joint, Side::First).unwrap();
        let mb = marginal(&joint, Side::Second).unwrap();
        assert!(marginal_deviation(&ma, &a) < 1e-7 * 10.0);
        assert!(marginal_deviation(&mb, &b) < 1e-7 * 10.0);
    }

    #[test]
    fn postprocessing_reflexive() {
        let mut rng = random::test_rng(109);
        let ins = random::random_instrument(2, 2, 2, 1, &mut rng);
        let r = check_postprocessing(&ins, &ins, &cfg()).unwrap();
        assert_eq!(r.verdict.status, Status::Feasible);
        // Processors reconstruct the target.
        let procs = r.processors.unwrap();
        for t in 0..ins.n_outcomes() {
            let mut rebuilt = CMatrix::zeros(4, 4);
            for s in 0..ins.n_outcomes() {
                let c = crate::devices::compose(procs[s].op(t), ins.op(s)).unwrap();
                rebuilt = rebuilt.add(c.choi());
            }
            assert!(rebuilt.sub(ins.op(t).choi()).fnorm() < 1e-5);
        }
    }

    #[test]
    fn any_instrument_postprocesses_from_its_luders() {
        let mut rng = random::test_rng(113);
        let ins = random::random_instrument(2, 2, 2, 1, &mut rng);
        let lud = ins.induced_povm().luders().unwrap();
        let r = check_postprocessing(&ins, &lud, &cfg()).unwrap();
        assert_eq!(r.verdict.status, Status::Feasible);
    }

    #[test]
    fn identity_not_postprocessing_of_trash() {
        let trash = Instrument::channel(crate::devices::trash_prepare_op(
            1.0,
            &crate::devices::State::maximally_mixed(2),
            2,
        ))
        .unwrap();
        let id = Instrument::identity(2);
        let r = check_postprocessing(&id, &trash, &cfg()).unwrap();
        assert_eq!(r.verdict.status, Status::Infeasible);
    }

    #[test]
    fn via_complementary_agrees_on_known_cases() {
        let id = Instrument::identity(2);
        let r = check_compatible_via_complementary(&id, &id, &cfg()).unwrap();
        assert_eq!(r.verdict.status, Status::Infeasible);

        let z = catalog::sharp_qubit_z().as_instrument();
        let r = check_compatible_via_complementary(&z, &z, &cfg()).unwrap();
        assert_eq!(r.verdict.status, Status::Feasible);
        // The constructed joint has verified marginals.
        let joint = r.joint.expect("joint verified");
        assert!(devices_equal(
            &marginal(&joint, Side::Second).unwrap(),
            &z,
            1e-5
        ));
    }

    #[test]
    fn povm_instrument_reduction_via_luders() {
        // A POVM A and an instrument J are compatible iff J ⪯ Lüders(A).
        let z = catalog::sharp_qubit_z();
        let zi = z.as_instrument();
        let lud_z = z.luders().unwrap();
        let mut rng = random::test_rng(127);
        let j = random::random_instrument(2, 2, 2, 1, &mut rng);
        let compat = check_compatible(&zi, &j, &cfg()).unwrap();
        let pp = check_postprocessing(&j, &lud_z, &cfg()).unwrap();
        assert_eq!(compat.verdict.status, pp.verdict.status);
    }

    #[test]
    fn sandwich_agrees_with_direct_on_povms() {
        let z = catalog::sharp_qubit_z();
        let x = catalog::sharp_qubit_x();
        let r = check_povm_povm_sandwich(&z, &x, &cfg()).unwrap();
        assert_eq!(r.verdict.status, Status::Infeasible);

        let r = check_povm_povm_sandwich(&z, &z, &cfg()).unwrap();
        assert_eq!(r.verdict.status, Status::Feasible);
        let joint = r.joint.unwrap();
        let ma = marginal(&joint, Side::First).unwrap();
        assert!(marginal_deviation(&ma, &z.as_instrument()) < 1e-5);

        // A trivial POVM is compatible with anything.
        let triv = catalog::trivial_qubit_povm();
        let mut rng = random::test_rng(131);
        let b = random::random_povm(2, 2, &mut rng);
        let r = check_povm_povm_sandwich(&triv, &b, &cfg()).unwrap();
        assert_eq!(r.verdict.status, Status::Feasible);
    }

    #[test]
    fn jordan_product_marginals_and_trash_case() {
        let mut rng = random::test_rng(137);
        let phi = random::random_channel(2, 2, 2, &mut rng);
        let psi = random::random_channel(2, 2, 2, &mut rng);
        let jp = jordan_product_choi(&phi, &psi).unwrap();
        // Partial traces reproduce the Choi matrices of the factors.
        let mphi = partial_trace(&jp, &[2, 2, 2], &[0, 1]).unwrap();
        let mpsi = partial_trace(&jp, &[2, 2, 2], &[0, 2]).unwrap();
        assert!(mphi.sub(phi.op(0).choi()).fnorm() < 1e-10);
        assert!(mpsi.sub(psi.op(0).choi()).fnorm() < 1e-10);

        // Trash channels: Jordan product PSD.
        let trash = Instrument::channel(crate::devices::trash_prepare_op(
            1.0,
            &crate::devices::State::maximally_mixed(2),
            2,
        ))
        .unwrap();
        let jp = jordan_product_choi(&trash, &trash).unwrap();
        assert!(crate::linalg::min_eig(&jp).unwrap() > -1e-12);
    }

    #[test]
    fn jordan_psd_implies_direct_feasible() {
        let trash = Instrument::channel(crate::devices::trash_prepare_op(
            1.0,
            &crate::devices::State::maximally_mixed(2),
            2,
        ))
        .unwrap();
        let probe = check_compatible_jordan(&trash, &trash, &cfg()).unwrap();
        assert_eq!(probe.verdict.status, Status::Feasible);
        let direct = check_compatible(&trash, &trash, &cfg()).unwrap();
        assert_eq!(direct.verdict.status, Status::Feasible);
    }

    #[test]
    fn nondisturbance_exact_cases() {
        let id = Instrument::identity(2);
        let mut rng = random::test_rng(139);
        let j = random::random_instrument(2, 2, 2, 1, &mut rng);
        assert!(check_nondisturbance_exact(&id, &j).unwrap());

        let lud_z = catalog::sharp_qubit_z().luders().unwrap();
        let zi = catalog::sharp_qubit_z().as_instrument();
        let xi = catalog::sharp_qubit_x().as_instrument();
        assert!(check_nondisturbance_exact(&lud_z, &zi).unwrap());
        assert!(!check_nondisturbance_exact(&lud_z, &xi).unwrap());
    }

    #[test]
    fn povm_nondisturbance_cases() {
        let zi = catalog::sharp_qubit_z().as_instrument();
        // Trivial POVM never disturbs.
        let triv = catalog::trivial_qubit_povm();
        let v = check_povm_nondisturbance(&triv, &zi, &cfg()).unwrap();
        assert_eq!(v.status, Status::Feasible);

        // Sharp Z does not disturb Z (Lüders witness) but no A=Z instrument
        // leaves X undisturbed.
        let z = catalog::sharp_qubit_z();
        let v = check_povm_nondisturbance(&z, &zi, &cfg()).unwrap();
        assert_eq!(v.status, Status::Feasible);
        let xi = catalog::sharp_qubit_x().as_instrument();
        let v = check_povm_nondisturbance(&z, &xi, &cfg()).unwrap();
        assert_eq!(v.status, Status::Infeasible);
    }

    #[test]
    fn traditional_compatibility_variant() {
        // Lüders(Z) with itself: the traditional joint G_(x,y) = δ_xy I_x
        // works because the operations are orthogonal.
        let lud = catalog::sharp_qubit_z().luders().unwrap();
        let r = check_compatible_traditional(&lud, &lud, &cfg()).unwrap();
        assert_eq!(r.verdict.status, Status::Feasible);

        // Any device is traditionally self-compatible via G_(x,y) = δ_xy I_x;
        // for the single-outcome identity the joint is the identity itself.
        // (Unlike the tensor-output notion, where id/id is incompatible.)
        let id = Instrument::identity(2);
        let r = check_compatible_traditional(&id, &id, &cfg()).unwrap();
        assert_eq!(r.verdict.status, Status::Feasible);

        // Lüders(Z) against Lüders(X) has incompatible induced POVMs, which
        // rules out any traditional joint.
        let ludx = catalog::sharp_qubit_x().luders().unwrap();
        let r = check_compatible_traditional(&lud, &ludx, &cfg()).unwrap();
        assert_eq!(r.verdict.status, Status::Infeasible);
    }
}
