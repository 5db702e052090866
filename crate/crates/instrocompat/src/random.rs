//! Seeded random device generators for tests and corpus runs.
//!
//! All generators are deterministic given the RNG, so test corpora are
//! reproducible from a fixed seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::devices::{Instrument, Operation, Povm, State};
use crate::linalg::{herm_eig, CMatrix, C64};

/// Deterministic RNG for tests.
pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix with i.i.d. standard-normal-ish complex entries.
pub fn random_complex(rows: usize, cols: usize, rng: &mut impl Rng) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

/// Random Hermitian matrix with entries of order one.
pub fn random_hermitian(dim: usize, rng: &mut impl Rng) -> CMatrix {
    random_complex(dim, dim, rng).hermitize()
}

/// Random strictly positive definite matrix G·G† + εI.
pub fn random_pd(dim: usize, rng: &mut impl Rng) -> CMatrix {
    let g = random_complex(dim, dim, rng);
    g.mul(&g.adjoint())
        .add(&CMatrix::identity(dim).scale(1e-3))
}

/// Inverse square root of a positive definite matrix.
fn inv_sqrt(m: &CMatrix) -> CMatrix {
    let (vals, vecs) = herm_eig(m).expect("positive definite input");
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
    out
}

/// Random full-rank state.
pub fn random_state(dim: usize, rng: &mut impl Rng) -> State {
    let p = random_pd(dim, rng);
    let t = p.trace().re;
    State::new(p.scale(1.0 / t)).expect("normalized PD matrix is a state")
}

/// Random POVM: positive operators Gₓ normalized by S^{-1/2} Gₓ S^{-1/2}.
pub fn random_povm(dim: usize, n_outcomes: usize, rng: &mut impl Rng) -> Povm {
    let gs: Vec<CMatrix> = (0..n_outcomes).map(|_| random_pd(dim, rng)).collect();
    let mut total = CMatrix::zeros(dim, dim);
    for g in &gs {
        total = total.add(g);
    }
    let w = inv_sqrt(&total);
    let effects = gs.iter().map(|g| w.mul(g).mul(&w).hermitize()).collect();
    let outcomes = (0..n_outcomes).map(|x| x.to_string()).collect();
    Povm::new(dim, outcomes, effects).expect("normalized effects form a POVM")
}

/// Random instrument: Gaussian Kraus operators per outcome, normalized on
/// the input side so the operations sum to a channel.
pub fn random_instrument(
    dim_in: usize,
    dim_out: usize,
    n_outcomes: usize,
    kraus_per_outcome: usize,
    rng: &mut impl Rng,
) -> Instrument {
    let raw: Vec<Vec<CMatrix>> = (0..n_outcomes)
        .map(|_| {
            (0..kraus_per_outcome)
                .map(|_| random_complex(dim_out, dim_in, rng))
                .collect()
        })
        .collect();
    let mut total = CMatrix::zeros(dim_in, dim_in);
    for ks in &raw {
        for k in ks {
            total = total.add(&k.adjoint().mul(k));
        }
    }
    let w = inv_sqrt(&total.hermitize());
    let ops = raw
        .into_iter()
        .map(|ks| {
            let normalized: Vec<CMatrix> = ks.into_iter().map(|k| k.mul(&w)).collect();
            Operation::from_kraus(normalized, dim_in, dim_out)
                .expect("normalized Kraus list is trace nonincreasing")
        })
        .collect();
    let outcomes = (0..n_outcomes).map(|x| x.to_string()).collect();
    Instrument::new(dim_in, dim_out, outcomes, ops)
        .expect("normalized operations sum to a channel")
}

/// Random channel (one-outcome instrument).
pub fn random_channel(
    dim_in: usize,
    dim_out: usize,
    kraus_count: usize,
    rng: &mut impl Rng,
) -> Instrument {
    random_instrument(dim_in, dim_out, 1, kraus_count, rng)
}

/// Random CP trace-nonincreasing operation (a branch of a random two-outcome
/// instrument).
pub fn random_operation(
    dim_in: usize,
    dim_out: usize,
    kraus_count: usize,
    rng: &mut impl Rng,
) -> Operation {
    random_instrument(dim_in, dim_out, 2, kraus_count, rng)
        .ops()[0]
        .clone()
}
