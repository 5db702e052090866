//! Device types: POVMs, quantum operations/channels, instruments and states.
//!
//! The canonical internal representation of an operation is its Choi matrix
//! with the **input factor first**: for a map N from a `d_in`- to a
//! `d_out`-dimensional system,
//!
//! ```text
//! J(N) = Σ_ij |i⟩⟨j| ⊗ N(|i⟩⟨j|),
//! ```
//!
//! a PSD matrix on the `d_in·d_out`-dimensional space with factor dims
//! `[d_in, d_out]`. A channel satisfies `tr_out J = I`. Kraus lists are kept
//! lazily since every feasibility constraint in the crate is linear in Choi
//! form.

use std::collections::BTreeSet;

use once_cell::sync::OnceCell;
use thiserror::Error;

use crate::linalg::{
    herm_eig, link_product, min_eig, partial_trace, tensor, CMatrix, LinalgError,
};
use crate::tol::{EQ_TOL, HERM_TOL, PSD_TOL, RANK_TOL};

/// Errors raised when building or combining devices.
#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid POVM: {0}")]
    InvalidPovm(String),
    #[error("invalid operation: {0}")]
    InvalidOperation(String),
    #[error("invalid instrument: {0}")]
    InvalidInstrument(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("joint instrument lacks output factorization metadata")]
    MissingFactorization,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Which side of a joint device to marginalize onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Keep the first outcome index and the first output factor.
    First,
    /// Keep the second outcome index and the second output factor.
    Second,
}

// ---------------------------------------------------------------------------
// States
// ---------------------------------------------------------------------------

/// Density operator: PSD with unit trace.
#[derive(Debug, Clone)]
pub struct State {
    matrix: CMatrix,
}

impl State {
    pub fn new(matrix: CMatrix) -> Result<Self, DeviceError> {
        if !matrix.is_square() {
            return Err(DeviceError::InvalidState("state must be square".into()));
        }
        if !matrix.is_hermitian(HERM_TOL.max(1e-9)) {
            return Err(DeviceError::InvalidState("state is not Hermitian".into()));
        }
        let t = matrix.trace();
        if (t.re - 1.0).abs() > EQ_TOL || t.im.abs() > EQ_TOL {
            return Err(DeviceError::InvalidState(format!(
                "trace is {t}, expected 1"
            )));
        }
        let me = min_eig(&matrix)?;
        if me < -PSD_TOL {
            return Err(DeviceError::InvalidState(format!(
                "min eigenvalue {me:.3e} below -{PSD_TOL:.0e}"
            )));
        }
        Ok(State { matrix })
    }

    /// Pure state |ψ⟩⟨ψ| from a (not necessarily normalized) column vector.
    pub fn pure(psi: &CMatrix) -> Result<Self, DeviceError> {
        if psi.cols() != 1 {
            return Err(DeviceError::InvalidState("expected a column vector".into()));
        }
        let norm2: f64 = psi.data().iter().map(|a| a.norm_sqr()).sum();
        if norm2 <= 0.0 {
            return Err(DeviceError::InvalidState("zero vector".into()));
        }
        let d = psi.rows();
        let m = CMatrix::from_fn(d, d, |i, j| psi.at(i, 0) * psi.at(j, 0).conj() / norm2);
        Ok(State { matrix: m })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        State {
            matrix: CMatrix::identity(dim).scale(1.0 / dim as f64),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }
}

// ---------------------------------------------------------------------------
// POVMs
// ---------------------------------------------------------------------------

/// Positive operator-valued measure: effects indexed by string outcome
/// labels, summing to the identity.
#[derive(Debug, Clone)]
pub struct Povm {
    dim_in: usize,
    outcomes: Vec<String>,
    effects: Vec<CMatrix>,
}

impl Povm {
    pub fn new(
        dim_in: usize,
        outcomes: Vec<String>,
        effects: Vec<CMatrix>,
    ) -> Result<Self, DeviceError> {
        Self::new_with_tol(dim_in, outcomes, effects, PSD_TOL, EQ_TOL)
    }

    /// Like [`Povm::new`] with explicit PSD / normalization tolerances.
    pub fn new_with_tol(
        dim_in: usize,
        outcomes: Vec<String>,
        effects: Vec<CMatrix>,
        psd_tol: f64,
        eq_tol: f64,
    ) -> Result<Self, DeviceError> {
        if outcomes.len() != effects.len() || outcomes.is_empty() {
            return Err(DeviceError::InvalidPovm(
                "outcome labels and effects must be non-empty and equal length".into(),
            ));
        }
        if outcomes.iter().collect::<BTreeSet<_>>().len() != outcomes.len() {
            return Err(DeviceError::InvalidPovm("duplicate outcome labels".into()));
        }
        let mut sum = CMatrix::zeros(dim_in, dim_in);
        for (label, e) in outcomes.iter().zip(&effects) {
            if e.rows() != dim_in || e.cols() != dim_in {
                return Err(DeviceError::InvalidPovm(format!(
                    "effect '{label}' is {}x{}, expected {dim_in}x{dim_in}",
                    e.rows(),
                    e.cols()
                )));
            }
            if !e.is_hermitian(HERM_TOL.max(psd_tol)) {
                return Err(DeviceError::InvalidPovm(format!(
                    "effect '{label}' is not Hermitian"
                )));
            }
            let me = min_eig(&e.hermitize())?;
            if me < -psd_tol {
                return Err(DeviceError::InvalidPovm(format!(
                    "effect '{label}' has min eigenvalue {me:.3e}"
                )));
            }
            sum = sum.add(e);
        }
        let dev = sum.sub(&CMatrix::identity(dim_in)).max_abs();
        if dev > eq_tol {
            return Err(DeviceError::InvalidPovm(format!(
                "effects sum to identity only within {dev:.3e} > {eq_tol:.0e}"
            )));
        }
        Ok(Povm { dim_in, outcomes, effects })
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    pub fn effects(&self) -> &[CMatrix] {
        &self.effects
    }

    pub fn effect(&self, index: usize) -> &CMatrix {
        &self.effects[index]
    }

    /// True when every effect is idempotent (projection-valued measure).
    pub fn is_sharp(&self) -> bool {
        self.effects
            .iter()
            .all(|e| e.mul(e).sub(e).max_abs() <= EQ_TOL)
    }

    /// Embed as an instrument with one-dimensional output; the Choi matrix of
    /// the operation for outcome x is the transposed effect A(x)ᵀ.
    pub fn as_instrument(&self) -> Instrument {
        let ops = self
            .effects
            .iter()
            .map(|e| {
                Operation::from_choi_with_tol(e.transpose(), self.dim_in, 1, 1.0)
                    .expect("valid POVM effect gives a valid operation")
            })
            .collect();
        Instrument {
            dim_in: self.dim_in,
            dim_out: 1,
            outcomes: self.outcomes.clone(),
            ops,
            output_factors: None,
        }
    }

    /// Lüders instrument: outcome x applies ρ ↦ √A(x) ρ √A(x).
    pub fn luders(&self) -> Result<Instrument, DeviceError> {
        let ops = self
            .effects
            .iter()
            .map(|e| {
                let k = crate::linalg::sqrt_psd(&e.hermitize())?;
                Operation::from_kraus(vec![k], self.dim_in, self.dim_in)
            })
            .collect::<Result<Vec<_>, DeviceError>>()?;
        Instrument::new(self.dim_in, self.dim_in, self.outcomes.clone(), ops)
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Completely positive trace-nonincreasing map stored in Choi form, with a
/// lazily generated Kraus list.
#[derive(Debug, Clone)]
pub struct Operation {
    dim_in: usize,
    dim_out: usize,
    choi: CMatrix,
    kraus: OnceCell<Vec<CMatrix>>,
}

/// Choi matrix of a Kraus list: J = Σ_k v_k v_k† with v_k[(i,a)] = K_k[a,i].
pub fn choi_from_kraus(kraus: &[CMatrix], dim_in: usize, dim_out: usize) -> CMatrix {
    let d = dim_in * dim_out;
    let mut j = CMatrix::zeros(d, d);
    for k in kraus {
        for i in 0..dim_in {
            for a in 0..dim_out {
                let u = k.at(a, i);
                if u.norm_sqr() == 0.0 {
                    continue;
                }
                for i2 in 0..dim_in {
                    for b in 0..dim_out {
                        j.add_at(i * dim_out + a, i2 * dim_out + b, u * k.at(b, i2).conj());
                    }
                }
            }
        }
    }
    j
}

/// Kraus operators of a PSD Choi matrix; one operator per eigenvalue above
/// [`RANK_TOL`], reconstructing the Choi within numerical precision.
pub fn kraus_of(choi: &CMatrix, dim_in: usize, dim_out: usize) -> Result<Vec<CMatrix>, DeviceError> {
    if choi.rows() != dim_in * dim_out || !choi.is_square() {
        return Err(DeviceError::DimMismatch(format!(
            "Choi matrix is {}x{}, expected dimension {}",
            choi.rows(),
            choi.cols(),
            dim_in * dim_out
        )));
    }
    let (vals, vecs) = herm_eig(choi)?;
    if let Some(&last) = vals.last() {
        if last < -PSD_TOL {
            return Err(DeviceError::Linalg(LinalgError::NotPsd { min_eig: last }));
        }
    }
    let mut out = Vec::new();
    for (r, &lambda) in vals.iter().enumerate() {
        if lambda <= RANK_TOL {
            continue;
        }
        let s = lambda.sqrt();
        out.push(CMatrix::from_fn(dim_out, dim_in, |a, i| {
            vecs.at(i * dim_out + a, r) * s
        }));
    }
    Ok(out)
}

impl Operation {
    /// Build from a Kraus list (each operator `dim_out × dim_in`). An empty
    /// list yields the zero operation.
    pub fn from_kraus(
        kraus: Vec<CMatrix>,
        dim_in: usize,
        dim_out: usize,
    ) -> Result<Self, DeviceError> {
        for k in &kraus {
            if k.rows() != dim_out || k.cols() != dim_in {
                return Err(DeviceError::InvalidOperation(format!(
                    "Kraus operator is {}x{}, expected {dim_out}x{dim_in}",
                    k.rows(),
                    k.cols()
                )));
            }
        }
        let choi = choi_from_kraus(&kraus, dim_in, dim_out);
        let op = Operation {
            dim_in,
            dim_out,
            choi,
            kraus: OnceCell::new(),
        };
        op.check_trace_nonincreasing(EQ_TOL)?;
        let _ = op.kraus.set(kraus);
        Ok(op)
    }

    /// Build from a Choi matrix, validating Hermiticity, positivity and the
    /// trace-nonincreasing condition at default tolerances.
    pub fn from_choi(choi: CMatrix, dim_in: usize, dim_out: usize) -> Result<Self, DeviceError> {
        Self::from_choi_with_tol(choi, dim_in, dim_out, 1.0)
    }

    /// Like [`Operation::from_choi`] with all tolerances relaxed by `slack`
    /// (used when assembling devices from solver witnesses).
    pub fn from_choi_with_tol(
        choi: CMatrix,
        dim_in: usize,
        dim_out: usize,
        slack: f64,
    ) -> Result<Self, DeviceError> {
        if choi.rows() != dim_in * dim_out || !choi.is_square() {
            return Err(DeviceError::DimMismatch(format!(
                "Choi matrix is {}x{}, expected dimension {}",
                choi.rows(),
                choi.cols(),
                dim_in * dim_out
            )));
        }
        if !choi.is_hermitian(HERM_TOL.max(slack * PSD_TOL)) {
            return Err(DeviceError::InvalidOperation(
                "Choi matrix is not Hermitian".into(),
            ));
        }
        let choi = choi.hermitize();
        let me = min_eig(&choi)?;
        if me < -slack * PSD_TOL {
            return Err(DeviceError::InvalidOperation(format!(
                "Choi matrix has min eigenvalue {me:.3e}"
            )));
        }
        let op = Operation {
            dim_in,
            dim_out,
            choi,
            kraus: OnceCell::new(),
        };
        op.check_trace_nonincreasing(slack * EQ_TOL)?;
        Ok(op)
    }

    fn check_trace_nonincreasing(&self, tol: f64) -> Result<(), DeviceError> {
        let eff = self.effect()?;
        let top = herm_eig(&eff.sub(&CMatrix::identity(self.dim_in)).hermitize())?
            .0
            .first()
            .copied()
            .unwrap_or(0.0);
        if top > tol {
            return Err(DeviceError::InvalidOperation(format!(
                "trace-increasing by {top:.3e} > {tol:.0e}"
            )));
        }
        Ok(())
    }

    /// Identity channel on a `dim`-dimensional system.
    pub fn identity(dim: usize) -> Self {
        Operation::from_kraus(vec![CMatrix::identity(dim)], dim, dim)
            .expect("identity is a valid channel")
    }

    /// Zero operation.
    pub fn zero(dim_in: usize, dim_out: usize) -> Self {
        Operation::from_kraus(Vec::new(), dim_in, dim_out).expect("zero map is a valid operation")
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    /// Choi matrix (input factor first, dims `[dim_in, dim_out]`).
    pub fn choi(&self) -> &CMatrix {
        &self.choi
    }

    /// Kraus list, generated from the Choi eigendecomposition on first use.
    pub fn kraus(&self) -> &[CMatrix] {
        self.kraus
            .get_or_init(|| {
                kraus_of(&self.choi, self.dim_in, self.dim_out)
                    .expect("validated Choi decomposes into Kraus form")
            })
            .as_slice()
    }

    /// The effect Σ K†K of the operation, as (tr_out J)ᵀ.
    pub fn effect(&self) -> Result<CMatrix, DeviceError> {
        let t = partial_trace(&self.choi, &[self.dim_in, self.dim_out], &[0])?;
        Ok(t.transpose())
    }

    /// Apply to a density-like matrix: Σ K ρ K†, evaluated in Choi form.
    pub fn apply(&self, rho: &CMatrix) -> Result<CMatrix, DeviceError> {
        if rho.rows() != self.dim_in || rho.cols() != self.dim_in {
            return Err(DeviceError::DimMismatch(format!(
                "input is {}x{}, operation expects {}x{}",
                rho.rows(),
                rho.cols(),
                self.dim_in,
                self.dim_in
            )));
        }
        let (di, dout) = (self.dim_in, self.dim_out);
        let mut out = CMatrix::zeros(dout, dout);
        for i in 0..di {
            for k in 0..di {
                let r = rho.at(i, k);
                if r.norm_sqr() == 0.0 {
                    continue;
                }
                for a in 0..dout {
                    for b in 0..dout {
                        out.add_at(a, b, self.choi.at(i * dout + a, k * dout + b) * r);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Choi-level sum of two operations with equal dims.
    pub fn add(&self, other: &Operation) -> Result<Operation, DeviceError> {
        if (self.dim_in, self.dim_out) != (other.dim_in, other.dim_out) {
            return Err(DeviceError::DimMismatch("operation sum".into()));
        }
        Operation::from_choi_with_tol(
            self.choi.add(&other.choi),
            self.dim_in,
            self.dim_out,
            10.0,
        )
    }

    /// True when the Choi matrix is numerically zero.
    pub fn is_zero(&self) -> bool {
        self.choi.max_abs() <= RANK_TOL
    }
}

/// Composition `second ∘ first` via the link product of Choi matrices.
pub fn compose(second: &Operation, first: &Operation) -> Result<Operation, DeviceError> {
    if first.dim_out() != second.dim_in() {
        return Err(DeviceError::DimMismatch(format!(
            "compose: first outputs dim {}, second expects dim {}",
            first.dim_out(),
            second.dim_in()
        )));
    }
    let choi = link_product(
        first.choi(),
        second.choi(),
        first.dim_in(),
        first.dim_out(),
        second.dim_out(),
    )?;
    Operation::from_choi_with_tol(choi, first.dim_in(), second.dim_out(), 10.0)
}

/// Tensor product of operations (Kraus-level pairwise products).
pub fn tensor_operations(a: &Operation, b: &Operation) -> Result<Operation, DeviceError> {
    let mut kraus = Vec::with_capacity(a.kraus().len() * b.kraus().len());
    for ka in a.kraus() {
        for kb in b.kraus() {
            kraus.push(tensor(ka, kb));
        }
    }
    Operation::from_kraus(kraus, a.dim_in() * b.dim_in(), a.dim_out() * b.dim_out())
}

// ---------------------------------------------------------------------------
// Instruments
// ---------------------------------------------------------------------------

/// Outcome-indexed family of operations whose sum is a channel.
///
/// A [`Povm`] embeds as an instrument with `dim_out = 1`; a channel is the
/// one-outcome case ([`QChannel`]).
#[derive(Debug, Clone)]
pub struct Instrument {
    dim_in: usize,
    dim_out: usize,
    outcomes: Vec<String>,
    ops: Vec<Operation>,
    /// Output-space factorization `(d_K, d_V)` for joint devices whose
    /// outcome labels are pairs "x|y".
    output_factors: Option<(usize, usize)>,
}

/// A channel is a one-outcome instrument.
pub type QChannel = Instrument;

impl Instrument {
    pub fn new(
        dim_in: usize,
        dim_out: usize,
        outcomes: Vec<String>,
        ops: Vec<Operation>,
    ) -> Result<Self, DeviceError> {
        Self::new_with_tol(dim_in, dim_out, outcomes, ops, EQ_TOL)
    }

    /// Like [`Instrument::new`] with an explicit channel-condition tolerance.
    pub fn new_with_tol(
        dim_in: usize,
        dim_out: usize,
        outcomes: Vec<String>,
        ops: Vec<Operation>,
        eq_tol: f64,
    ) -> Result<Self, DeviceError> {
        if outcomes.len() != ops.len() || outcomes.is_empty() {
            return Err(DeviceError::InvalidInstrument(
                "outcome labels and operations must be non-empty and equal length".into(),
            ));
        }
        if outcomes.iter().collect::<BTreeSet<_>>().len() != outcomes.len() {
            return Err(DeviceError::InvalidInstrument(
                "duplicate outcome labels".into(),
            ));
        }
        let mut total = CMatrix::zeros(dim_in * dim_out, dim_in * dim_out);
        for (label, op) in outcomes.iter().zip(&ops) {
            if op.dim_in() != dim_in || op.dim_out() != dim_out {
                return Err(DeviceError::InvalidInstrument(format!(
                    "operation '{label}' has dims {}→{}, expected {dim_in}→{dim_out}",
                    op.dim_in(),
                    op.dim_out()
                )));
            }
            total = total.add(op.choi());
        }
        let reduced = partial_trace(&total, &[dim_in, dim_out], &[0])?;
        let dev = reduced.sub(&CMatrix::identity(dim_in)).max_abs();
        if dev > eq_tol {
            return Err(DeviceError::InvalidInstrument(format!(
                "operations sum to a channel only within {dev:.3e} > {eq_tol:.0e}"
            )));
        }
        Ok(Instrument {
            dim_in,
            dim_out,
            outcomes,
            ops,
            output_factors: None,
        })
    }

    /// Wrap a trace-preserving operation as a one-outcome instrument.
    pub fn channel(op: Operation) -> Result<Self, DeviceError> {
        let (di, dout) = (op.dim_in(), op.dim_out());
        Instrument::new(di, dout, vec!["0".into()], vec![op])
    }

    /// Identity channel as an instrument.
    pub fn identity(dim: usize) -> Self {
        Instrument::channel(Operation::identity(dim)).expect("identity channel")
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    pub fn ops(&self) -> &[Operation] {
        &self.ops
    }

    pub fn op(&self, index: usize) -> &Operation {
        &self.ops[index]
    }

    /// Output-space factorization metadata of joint devices.
    pub fn output_factors(&self) -> Option<(usize, usize)> {
        self.output_factors
    }

    /// Attach output-factorization metadata `(d_K, d_V)`.
    pub fn with_output_factors(mut self, dk: usize, dv: usize) -> Result<Self, DeviceError> {
        if dk * dv != self.dim_out {
            return Err(DeviceError::DimMismatch(format!(
                "output factors {dk}·{dv} do not multiply to dim_out {}",
                self.dim_out
            )));
        }
        self.output_factors = Some((dk, dv));
        Ok(self)
    }

    /// Induced POVM: A(x) = (tr_out J(I_x))ᵀ, satisfying the Born rule
    /// tr(I_x(ρ)) = tr(A(x)ρ).
    pub fn induced_povm(&self) -> Povm {
        let effects = self
            .ops
            .iter()
            .map(|op| op.effect().expect("validated operation has an effect"))
            .collect();
        Povm::new_with_tol(self.dim_in, self.outcomes.clone(), effects, 10.0 * PSD_TOL, 10.0 * EQ_TOL)
            .expect("induced effects of a valid instrument form a POVM")
    }

    /// Induced channel Φ = Σ_x I_x as a one-outcome instrument.
    pub fn induced_channel(&self) -> QChannel {
        let mut total = CMatrix::zeros(
            self.dim_in * self.dim_out,
            self.dim_in * self.dim_out,
        );
        for op in &self.ops {
            total = total.add(op.choi());
        }
        let op = Operation::from_choi_with_tol(total, self.dim_in, self.dim_out, 10.0)
            .expect("sum of instrument operations is a channel");
        Instrument::channel(op).expect("induced channel is trace preserving")
    }

    /// Apply the operation of outcome `index` to `rho`.
    pub fn apply(&self, index: usize, rho: &CMatrix) -> Result<CMatrix, DeviceError> {
        self.ops[index].apply(rho)
    }
}

/// Tensor product instrument: outcomes Ω×Λ with labels "x|y", operations
/// `I_x ⊗ J_y`, output factorization recorded for marginalization.
pub fn tensor_instruments(i: &Instrument, j: &Instrument) -> Result<Instrument, DeviceError> {
    let mut outcomes = Vec::new();
    let mut ops = Vec::new();
    for (xl, xop) in i.outcomes().iter().zip(i.ops()) {
        for (yl, yop) in j.outcomes().iter().zip(j.ops()) {
            outcomes.push(format!("{xl}|{yl}"));
            ops.push(tensor_operations(xop, yop)?);
        }
    }
    Instrument::new(
        i.dim_in() * j.dim_in(),
        i.dim_out() * j.dim_out(),
        outcomes,
        ops,
    )?
    .with_output_factors(i.dim_out(), j.dim_out())
}

/// Marginal of a joint instrument over Ω×Λ with output K ⊗ V: sums over the
/// discarded outcome index and partial-traces the discarded output factor.
pub fn marginal(joint: &Instrument, side: Side) -> Result<Instrument, DeviceError> {
    let (dk, dv) = joint
        .output_factors()
        .ok_or(DeviceError::MissingFactorization)?;
    let keep_dim = match side {
        Side::First => dk,
        Side::Second => dv,
    };
    let keep_factors: &[usize] = match side {
        Side::First => &[0, 1],
        Side::Second => &[0, 2],
    };
    let mut labels: Vec<String> = Vec::new();
    let mut chois: Vec<CMatrix> = Vec::new();
    for (pair, op) in joint.outcomes().iter().zip(joint.ops()) {
        let (x, y) = pair
            .split_once('|')
            .ok_or_else(|| DeviceError::InvalidInstrument(format!(
                "outcome label '{pair}' is not a pair \"x|y\""
            )))?;
        let kept = match side {
            Side::First => x,
            Side::Second => y,
        };
        let reduced = partial_trace(op.choi(), &[joint.dim_in(), dk, dv], keep_factors)?;
        match labels.iter().position(|l| l == kept) {
            Some(pos) => chois[pos] = chois[pos].add(&reduced),
            None => {
                labels.push(kept.to_string());
                chois.push(reduced);
            }
        }
    }
    let ops = chois
        .into_iter()
        .map(|c| Operation::from_choi_with_tol(c, joint.dim_in(), keep_dim, 100.0))
        .collect::<Result<Vec<_>, DeviceError>>()?;
    Instrument::new_with_tol(joint.dim_in(), keep_dim, labels, ops, 100.0 * EQ_TOL)
}

/// Choi-level equality of instruments: same dims and outcome sequences, and
/// every Choi block within Frobenius distance `tol`.
pub fn devices_equal(a: &Instrument, b: &Instrument, tol: f64) -> bool {
    a.dim_in() == b.dim_in()
        && a.dim_out() == b.dim_out()
        && a.outcomes() == b.outcomes()
        && a.ops()
            .iter()
            .zip(b.ops())
            .all(|(x, y)| x.choi().sub(y.choi()).fnorm() <= tol)
}

/// Trash-and-prepare operation ρ ↦ tr(ρ) p ξ with Choi `p · I ⊗ ξ`.
pub fn trash_prepare_op(p: f64, xi: &State, dim_in: usize) -> Operation {
    let choi = tensor(&CMatrix::identity(dim_in), xi.matrix()).scale(p);
    Operation::from_choi_with_tol(choi, dim_in, xi.dim(), 10.0)
        .expect("trash-and-prepare Choi is valid")
}

/// Measure-and-prepare operation ρ ↦ tr(Eρ) ξ with Choi `Eᵀ ⊗ ξ`.
pub fn measure_prepare_op(effect: &CMatrix, xi: &State) -> Operation {
    let choi = tensor(&effect.transpose(), xi.matrix());
    Operation::from_choi_with_tol(choi, effect.rows(), xi.dim(), 10.0)
        .expect("measure-and-prepare Choi is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::linalg::{sqrt_psd, C64};
    use crate::random;

    fn assert_close(a: &CMatrix, b: &CMatrix, tol: f64) {
        let d = a.sub(b).max_abs();
        assert!(d <= tol, "matrices differ by {d:.3e} > {tol:.3e}");
    }

    fn bell_choi() -> CMatrix {
        // J(id₂) = 2·|Φ⁺⟩⟨Φ⁺|.
        let mut m = CMatrix::zeros(4, 4);
        for &i in &[0usize, 3] {
            for &j in &[0usize, 3] {
                m.set(i, j, C64::new(1.0, 0.0));
            }
        }
        m
    }

    #[test]
    fn choi_of_identity_trash_zero() {
        assert_close(Operation::identity(2).choi(), &bell_choi(), 1e-15);

        let xi = State::new(CMatrix::from_real_rows(&[vec![0.25, 0.0], vec![0.0, 0.75]])).unwrap();
        let trash = trash_prepare_op(1.0, &xi, 2);
        assert_close(
            trash.choi(),
            &tensor(&CMatrix::identity(2), xi.matrix()),
            1e-15,
        );

        assert_close(Operation::zero(2, 3).choi(), &CMatrix::zeros(6, 6), 0.0);
    }

    #[test]
    fn kraus_of_ranks() {
        // Rank-1 Choi of the identity: single Kraus ∝ I.
        let ks = kraus_of(&bell_choi(), 2, 2).unwrap();
        assert_eq!(ks.len(), 1);
        let k = &ks[0];
        assert!(k.at(0, 1).norm() < 1e-12 && k.at(1, 0).norm() < 1e-12);
        assert!((k.at(0, 0) - k.at(1, 1)).norm() < 1e-12);
        assert!((k.at(0, 0).norm() - 1.0).abs() < 1e-12);

        // Choi I₄/2 has rank 4.
        let ks = kraus_of(&CMatrix::identity(4).scale(0.5), 2, 2).unwrap();
        assert_eq!(ks.len(), 4);

        // Lüders operation of an effect: rank-1 Choi, Kraus √E.
        let e = CMatrix::from_real_rows(&[vec![0.7, 0.2], vec![0.2, 0.4]]);
        let s = sqrt_psd(&e).unwrap();
        let op = Operation::from_kraus(vec![s], 2, 2).unwrap();
        let ks = kraus_of(op.choi(), 2, 2).unwrap();
        assert_eq!(ks.len(), 1);
    }

    #[test]
    fn kraus_choi_round_trip_random() {
        let mut rng = random::test_rng(23);
        for _ in 0..10 {
            let op = random::random_operation(3, 2, 2, &mut rng);
            let ks = kraus_of(op.choi(), 3, 2).unwrap();
            let back = choi_from_kraus(&ks, 3, 2);
            assert!(back.sub(op.choi()).fnorm() <= 1e-8);
        }
    }

    #[test]
    fn induced_povm_cases() {
        // Lüders instrument of A induces A.
        let mut rng = random::test_rng(9);
        let a = random::random_povm(2, 3, &mut rng);
        let lud = a.luders().unwrap();
        let induced = lud.induced_povm();
        for (e, f) in a.effects().iter().zip(induced.effects()) {
            assert_close(e, f, 1e-10);
        }

        // Pauli instrument induces the trivial four-outcome POVM.
        let pauli = catalog::pauli_instrument();
        for e in pauli.induced_povm().effects() {
            assert_close(e, &CMatrix::identity(2).scale(0.25), 1e-12);
        }

        // Any channel induces {I}.
        let ch = Instrument::identity(3);
        assert_close(&ch.induced_povm().effects()[0], &CMatrix::identity(3), 1e-12);
    }

    #[test]
    fn induced_channel_cases() {
        let pauli = catalog::pauli_instrument();
        let phi = pauli.induced_channel();
        // Φ(ρ) = tr(ρ)·I/2, Choi = I₄/2.
        assert_close(phi.op(0).choi(), &CMatrix::identity(4).scale(0.5), 1e-12);

        // Lüders of sharp Z dephases.
        let z = catalog::sharp_qubit_z();
        let deph = z.luders().unwrap().induced_channel();
        let rho = CMatrix::from_rows(&[
            vec![C64::new(0.6, 0.0), C64::new(0.2, 0.1)],
            vec![C64::new(0.2, -0.1), C64::new(0.4, 0.0)],
        ]);
        let out = deph.op(0).apply(&rho).unwrap();
        assert_close(
            &out,
            &CMatrix::from_real_rows(&[vec![0.6, 0.0], vec![0.0, 0.4]]),
            1e-12,
        );

        // One-outcome instrument: induced channel is itself.
        let id = Instrument::identity(2);
        assert!(devices_equal(&id, &id.induced_channel(), 1e-12));
    }

    #[test]
    fn luders_instrument_cases() {
        // Trivial one-outcome POVM {I} gives the identity channel.
        let triv = Povm::new(2, vec!["0".into()], vec![CMatrix::identity(2)]).unwrap();
        assert!(devices_equal(
            &triv.luders().unwrap(),
            &Instrument::identity(2),
            1e-12
        ));

        // Sharp Z: operations are the projector conjugations.
        let z = catalog::sharp_qubit_z();
        let lud = z.luders().unwrap();
        for (p, op) in z.effects().iter().zip(lud.ops()) {
            let rho = CMatrix::from_real_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
            assert_close(&op.apply(&rho).unwrap(), &p.mul(&rho).mul(p), 1e-12);
        }

        // Scalar effect ½I: Kraus I/√2.
        let noisy = Povm::new(
            2,
            vec!["0".into(), "1".into()],
            vec![CMatrix::identity(2).scale(0.5), CMatrix::identity(2).scale(0.5)],
        )
        .unwrap();
        let lud = noisy.luders().unwrap();
        assert_close(
            &lud.op(0).kraus()[0],
            &CMatrix::identity(2).scale(1.0 / 2f64.sqrt()),
            1e-12,
        );
    }

    #[test]
    fn compose_cases() {
        let mut rng = random::test_rng(31);
        let f = random::random_operation(2, 2, 2, &mut rng);
        // compose(id, f) = f.
        let c = compose(&Operation::identity(2), &f).unwrap();
        assert_close(c.choi(), f.choi(), 1e-12);

        // Absorbing trash-and-prepare.
        let xi = State::maximally_mixed(2);
        let trash = trash_prepare_op(1.0, &xi, 2);
        let ch = random::random_channel(2, 2, 2, &mut rng);
        let c = compose(&trash, &ch.op(0)).unwrap();
        assert_close(c.choi(), trash.choi(), 1e-10);

        // Projector Lüders op is idempotent under composition.
        let pz = CMatrix::diag(&[1.0, 0.0]);
        let op = Operation::from_kraus(vec![pz], 2, 2).unwrap();
        let c = compose(&op, &op).unwrap();
        assert_close(c.choi(), op.choi(), 1e-12);
    }

    #[test]
    fn compose_matches_sequential_apply() {
        let mut rng = random::test_rng(37);
        let f = random::random_operation(2, 3, 2, &mut rng);
        let g = random::random_operation(3, 2, 2, &mut rng);
        let c = compose(&g, &f).unwrap();
        let rho = random::random_state(2, &mut rng);
        let direct = c.apply(rho.matrix()).unwrap();
        let seq = g.apply(&f.apply(rho.matrix()).unwrap()).unwrap();
        assert_close(&direct, &seq, 1e-10);
    }

    #[test]
    fn compose_associative_on_choi() {
        let mut rng = random::test_rng(41);
        let f = random::random_operation(2, 2, 2, &mut rng);
        let g = random::random_operation(2, 2, 2, &mut rng);
        let h = random::random_operation(2, 2, 2, &mut rng);
        let left = compose(&h, &compose(&g, &f).unwrap()).unwrap();
        let right = compose(&compose(&h, &g).unwrap(), &f).unwrap();
        assert!(left.choi().sub(right.choi()).fnorm() < 1e-9);
    }

    #[test]
    fn apply_cases() {
        let rho = CMatrix::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert_close(&Operation::identity(2).apply(&rho).unwrap(), &rho, 1e-15);

        let half = Povm::new(
            2,
            vec!["0".into(), "1".into()],
            vec![CMatrix::identity(2).scale(0.5), CMatrix::identity(2).scale(0.5)],
        )
        .unwrap()
        .luders()
        .unwrap();
        assert_close(&half.apply(0, &rho).unwrap(), &rho.scale(0.5), 1e-12);

        let sx = CMatrix::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let flip = Operation::from_kraus(vec![sx], 2, 2).unwrap();
        let one = CMatrix::from_real_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]);
        assert_close(&flip.apply(&rho).unwrap(), &one, 1e-15);
    }

    #[test]
    fn born_rule_consistency() {
        let mut rng = random::test_rng(43);
        for _ in 0..5 {
            let ins = random::random_instrument(2, 2, 3, 2, &mut rng);
            let povm = ins.induced_povm();
            let rho = random::random_state(2, &mut rng);
            for x in 0..ins.n_outcomes() {
                let p1 = ins.apply(x, rho.matrix()).unwrap().trace().re;
                let p2 = povm.effect(x).mul(rho.matrix()).trace().re;
                assert!((p1 - p2).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tensor_and_marginal() {
        // id ⊗ id is the identity on C⁴.
        let t = tensor_instruments(&Instrument::identity(2), &Instrument::identity(2)).unwrap();
        assert_close(t.op(0).choi(), Operation::identity(4).choi(), 1e-12);

        // Product of POVM embeddings is the product POVM.
        let mut rng = random::test_rng(47);
        let a = random::random_povm(2, 2, &mut rng);
        let b = random::random_povm(2, 2, &mut rng);
        let prod = tensor_instruments(&a.as_instrument(), &b.as_instrument()).unwrap();
        let effects = prod.induced_povm();
        let mut idx = 0;
        for ea in a.effects() {
            for eb in b.effects() {
                assert_close(effects.effect(idx), &tensor(ea, eb), 1e-10);
                idx += 1;
            }
        }

        // Degenerate second factor: |Λ|=1 and d_V=1 reproduces the first.
        let triv = Povm::new(1, vec!["*".into()], vec![CMatrix::identity(1)]).unwrap();
        let lifted = tensor_instruments(&a.as_instrument(), &triv.as_instrument()).unwrap();
        let back = marginal(&lifted, Side::First).unwrap();
        for (x, op) in a.as_instrument().ops().iter().enumerate() {
            assert_close(back.op(x).choi(), op.choi(), 1e-10);
        }
    }

    #[test]
    fn trash_and_prepare_joint_marginals() {
        // G_(x,y)(ρ) = p_x ξ_x ⊗ J_y(ρ): marginals are trash-and-prepare and J.
        let mut rng = random::test_rng(53);
        let j = random::random_instrument(2, 2, 2, 2, &mut rng);
        let p = [0.3, 0.7];
        let xs = [random::random_state(2, &mut rng), random::random_state(2, &mut rng)];

        let mut outcomes = Vec::new();
        let mut ops = Vec::new();
        for x in 0..2 {
            for (yl, jop) in j.outcomes().iter().zip(j.ops()) {
                outcomes.push(format!("{x}|{yl}"));
                // Choi entries: p_x · ξ_x[a,a'] · J(J_y)[(i,b),(i',b')] with
                // output ordering (a, b).
                let jc = jop.choi();
                let xi = xs[x].matrix();
                let choi = CMatrix::from_fn(8, 8, |r, c| {
                    let (i, a, b) = (r / 4, (r % 4) / 2, r % 2);
                    let (i2, a2, b2) = (c / 4, (c % 4) / 2, c % 2);
                    xi.at(a, a2) * jc.at(i * 2 + b, i2 * 2 + b2) * p[x]
                });
                ops.push(Operation::from_choi(choi, 2, 4).unwrap());
            }
        }
        let joint = Instrument::new(2, 4, outcomes, ops)
            .unwrap()
            .with_output_factors(2, 2)
            .unwrap();

        let mb = marginal(&joint, Side::Second).unwrap();
        assert!(devices_equal(&mb, &j, 1e-9));

        let ma = marginal(&joint, Side::First).unwrap();
        for (x, op) in ma.ops().iter().enumerate() {
            assert_close(op.choi(), trash_prepare_op(p[x], &xs[x], 2).choi(), 1e-9);
        }
    }

    #[test]
    fn devices_equal_cases() {
        let id = Instrument::identity(2);
        assert!(devices_equal(&id, &id, 0.0));

        // Kraus regenerated from Choi leaves the device unchanged.
        let mut rng = random::test_rng(59);
        let a = random::random_povm(2, 2, &mut rng);
        let lud = a.luders().unwrap();
        let regen = Instrument::new(
            2,
            2,
            lud.outcomes().to_vec(),
            lud.ops()
                .iter()
                .map(|op| Operation::from_choi(op.choi().clone(), 2, 2).unwrap())
                .collect(),
        )
        .unwrap();
        assert!(devices_equal(&lud, &regen, 1e-10));

        let trash = Instrument::channel(trash_prepare_op(1.0, &State::maximally_mixed(2), 2))
            .unwrap();
        assert!(!devices_equal(&id, &trash, 1e-3));
    }
}
