//! Stinespring dilations of instruments and complementary devices.
//!
//! A dilation of an instrument realizes every operation as
//! `I_x(ρ) = tr_anc[W ρ W† (E(x) ⊗ I_out)]` for an isometry
//! `W : H_in → H_anc ⊗ H_out` and an ancilla POVM `E`. The ancilla factor is
//! ordered **first** in the dilated space.

use thiserror::Error;

use crate::devices::{DeviceError, Instrument, Operation, Povm, QChannel};
use crate::linalg::{partial_trace, sqrt_psd, tensor, CMatrix, LinalgError, C64};
use crate::tol::{EQ_TOL, RANK_TOL};

/// Errors raised by dilation construction.
#[derive(Debug, Error)]
pub enum DilationError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(
        "numerical rank ambiguity: eigenvalue {eigenvalue:.3e} of the channel Choi matrix lies \
         within a decade of RANK_TOL = {RANK_TOL:.0e}; perturb the instrument or adjust the \
         rank tolerance"
    )]
    RankAmbiguity { eigenvalue: f64 },
    #[error("dilation does not reconstruct the instrument (max violation {max_violation:.3e})")]
    Inconsistent { max_violation: f64 },
}

/// (ancilla dimension, isometry, ancilla POVM) triple realizing an instrument.
#[derive(Debug, Clone)]
pub struct Dilation {
    /// Ancilla dimension.
    pub dim_anc: usize,
    /// Isometry from `dim_in` to `dim_anc · dim_out`, ancilla factor first.
    pub w: CMatrix,
    /// POVM on the ancilla, one effect per instrument outcome.
    pub e: Povm,
}

/// Result of checking a dilation against an instrument.
#[derive(Debug, Clone, Copy)]
pub struct DilationCheck {
    pub ok: bool,
    /// Largest entrywise violation across the isometry and reconstruction
    /// conditions.
    pub max_violation: f64,
}

/// Canonical dilation: ancilla dimension Σ_x m_x (m_x = Kraus count of I_x),
/// `W ψ = Σ_{x,i} |x,i⟩ ⊗ K_{x,i} ψ`, and E(x) the projector onto the
/// outcome-x ancilla block. The ancilla basis orders outcomes as declared
/// with the Kraus index fastest, and E is always sharp.
pub fn canonical_dilation(ins: &Instrument) -> Result<Dilation, DilationError> {
    let (di, dout) = (ins.dim_in(), ins.dim_out());
    let kraus_lists: Vec<&[CMatrix]> = ins.ops().iter().map(Operation::kraus).collect();
    let dim_anc: usize = kraus_lists.iter().map(|l| l.len()).sum::<usize>().max(1);

    let mut w = CMatrix::zeros(dim_anc * dout, di);
    let mut effects = vec![CMatrix::zeros(dim_anc, dim_anc); ins.n_outcomes()];
    let mut offset = 0;
    for (x, list) in kraus_lists.iter().enumerate() {
        for (idx, k) in list.iter().enumerate() {
            let a = offset + idx;
            effects[x].set(a, a, C64::new(1.0, 0.0));
            for o in 0..dout {
                for i in 0..di {
                    w.set(a * dout + o, i, k.at(o, i));
                }
            }
        }
        offset += list.len();
    }
    // A zero instrument branch contributes no ancilla directions; if every
    // branch were zero the instrument would be invalid, but a padded ancilla
    // direction keeps dim_anc ≥ 1 with an all-zero column handled by the
    // effect sum check below.
    let mut sum = CMatrix::zeros(dim_anc, dim_anc);
    for e in &effects {
        sum = sum.add(e);
    }
    let gap = CMatrix::identity(dim_anc).sub(&sum);
    if gap.max_abs() > 0.5 {
        // Unreached ancilla directions (only possible with zero branches):
        // assign them to the first outcome so E stays a POVM.
        effects[0] = effects[0].add(&gap);
    }

    let e = Povm::new(dim_anc, ins.outcomes().to_vec(), effects)?;
    Ok(Dilation { dim_anc, w, e })
}

/// Minimal dilation: ancilla dimension equals the Kraus rank of the induced
/// channel Φ. With `w_k = √λ_k u_k` the scaled eigenvectors of J(Φ), the
/// isometry stacks the corresponding minimal Kraus set and each effect is
/// recovered through the dual basis of {w_k}:
/// `E(x)ᵀ_{mn} = ⟨w̃_m| J(I_x) |w̃_n⟩`.
pub fn minimal_dilation(ins: &Instrument) -> Result<Dilation, DilationError> {
    let (di, dout) = (ins.dim_in(), ins.dim_out());
    let phi = ins.induced_channel();
    let jphi = phi.op(0).choi();
    let (vals, vecs) = crate::linalg::herm_eig(jphi)?;
    for &l in &vals {
        if l > RANK_TOL / 10.0 && l < RANK_TOL * 10.0 {
            return Err(DilationError::RankAmbiguity { eigenvalue: l });
        }
    }
    let rank = vals.iter().filter(|&&l| l > RANK_TOL).count();
    let dim_anc = rank.max(1);

    // Columns w_k of the scaled eigenvector matrix; Choi index (i, o).
    let d = di * dout;
    let wmat = CMatrix::from_fn(d, rank, |row, k| vecs.at(row, k) * vals[k].sqrt());

    // Isometry: Kraus operator L_k has entries L_k[o, i] = w_k[(i, o)].
    let mut w = CMatrix::zeros(dim_anc * dout, di);
    for k in 0..rank {
        for o in 0..dout {
            for i in 0..di {
                w.set(k * dout + o, i, wmat.at(i * dout + o, k));
            }
        }
    }

    // Dual basis via the Gram matrix: D = Wmat · G⁻¹, G = Wmat† Wmat.
    let gram = wmat.adjoint().mul(&wmat);
    let (gvals, gvecs) = crate::linalg::herm_eig(&gram)?;
    let mut ginv = CMatrix::zeros(rank, rank);
    for (k, &l) in gvals.iter().enumerate() {
        if l <= RANK_TOL {
            return Err(DilationError::RankAmbiguity { eigenvalue: l });
        }
        let f = 1.0 / l;
        for i in 0..rank {
            for j in 0..rank {
                ginv.add_at(i, j, gvecs.at(i, k) * gvecs.at(j, k).conj() * f);
            }
        }
    }
    let dual = wmat.mul(&ginv);

    let effects = ins
        .ops()
        .iter()
        .map(|op| {
            let m = dual.adjoint().mul(op.choi()).mul(&dual);
            m.transpose().hermitize()
        })
        .collect::<Vec<_>>();
    let e = Povm::new_with_tol(dim_anc, ins.outcomes().to_vec(), effects, 1e-7, 1e-7)?;
    Ok(Dilation { dim_anc, w, e })
}

/// Check both dilation invariants: `W†W = I` and reconstruction of every
/// operation on the matrix-unit basis of inputs.
pub fn verify_dilation(ins: &Instrument, dil: &Dilation) -> DilationCheck {
    let (di, dout) = (ins.dim_in(), ins.dim_out());
    let mut violation = dil
        .w
        .adjoint()
        .mul(&dil.w)
        .sub(&CMatrix::identity(di))
        .max_abs();
    let dims = [dil.dim_anc, dout];
    for (x, op) in ins.ops().iter().enumerate() {
        let exi = tensor(dil.e.effect(x), &CMatrix::identity(dout));
        for i in 0..di {
            for j in 0..di {
                let mut eij = CMatrix::zeros(di, di);
                eij.set(i, j, C64::new(1.0, 0.0));
                let lifted = dil.w.mul(&eij).mul(&dil.w.adjoint()).mul(&exi);
                let recon = partial_trace(&lifted, &dims, &[1]).expect("conforming dims");
                let expected = op.apply(&eij).expect("conforming dims");
                violation = violation.max(recon.sub(&expected).max_abs());
            }
        }
    }
    DilationCheck {
        ok: violation <= 1e-8,
        max_violation: violation,
    }
}

/// Complementary instrument for a given dilation:
/// `I^C_x(ρ) = tr_out[(√E(x) ⊗ I) W ρ W† (√E(x) ⊗ I)]`, an instrument from
/// the input space to the ancilla. Built from the Kraus operators
/// `M_{x,j} = (I_anc ⊗ ⟨j|) (√E(x) ⊗ I) W`.
pub fn complementary_instrument(
    ins: &Instrument,
    dil: &Dilation,
) -> Result<Instrument, DilationError> {
    let check = verify_dilation(ins, dil);
    if !check.ok {
        return Err(DilationError::Inconsistent {
            max_violation: check.max_violation,
        });
    }
    let (di, dout, da) = (ins.dim_in(), ins.dim_out(), dil.dim_anc);
    let mut ops = Vec::with_capacity(ins.n_outcomes());
    for x in 0..ins.n_outcomes() {
        let se = sqrt_psd(&dil.e.effect(x).hermitize())?;
        let mut kraus = Vec::with_capacity(dout);
        for j in 0..dout {
            // M[(a), i] = Σ_b √E(x)[a, b] · W[(b, j), i].
            let m = CMatrix::from_fn(da, di, |a, i| {
                (0..da).map(|b| se.at(a, b) * dil.w.at(b * dout + j, i)).sum()
            });
            kraus.push(m);
        }
        ops.push(Operation::from_kraus(kraus, di, da)?);
    }
    Ok(Instrument::new_with_tol(
        di,
        da,
        ins.outcomes().to_vec(),
        ops,
        10.0 * EQ_TOL,
    )?)
}

/// Complementary channel Φ^C(ρ) = tr_out[W ρ W†] from the minimal dilation.
pub fn complementary_channel(ch: &QChannel) -> Result<QChannel, DilationError> {
    let dil = minimal_dilation(ch)?;
    complementary_instrument(ch, &dil)
}
