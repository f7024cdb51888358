//! Multisets of pure-state realizations with integer multiplicities.
//!
//! Members are stored column-wise (ids, multiplicities, batch labels and one
//! flat amplitude buffer) so that millions of small states stay compact and
//! can be stepped in place.

use std::collections::{HashMap, HashSet};
use std::hash::{Hash, Hasher};
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{self, c, CMatrix, CVector};

/// Quantum used when rounding amplitudes into a [`CanonicalKey`].
pub const KEY_QUANTUM: f64 = 1e-8;
/// Amplitudes below this magnitude are skipped when choosing the phase reference.
const KEY_PHASE_THRESHOLD: f64 = 1e-3;
const NORM_TOL: f64 = 1e-9;

pub const CHECKPOINT_FORMAT: &str = "tnpq-ensemble";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Global-phase-invariant, quantized fingerprint of a state.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalKey(Vec<i64>);

impl CanonicalKey {
    pub fn of(psi: &[Complex64]) -> Self {
        let phase = psi
            .iter()
            .find(|z| z.norm() > KEY_PHASE_THRESHOLD)
            .map_or(linops::ONE, |z| z.conj() / z.norm());
        let mut q = Vec::with_capacity(2 * psi.len());
        for z in psi {
            let w = z * phase;
            q.push((w.re / KEY_QUANTUM).round() as i64);
            q.push((w.im / KEY_QUANTUM).round() as i64);
        }
        CanonicalKey(q)
    }

    pub fn hash64(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.0.hash(&mut h);
        h.finish()
    }
}

/// An owned realization (used for construction and checkpoints).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub state: CVector,
    pub multiplicity: u64,
    pub batch: u32,
}

/// A borrowed view of one ensemble member.
#[derive(Clone, Copy, Debug)]
pub struct Member<'a> {
    pub id: u64,
    pub multiplicity: u64,
    pub batch: u32,
    pub state: &'a [Complex64],
}

impl Member<'_> {
    pub fn to_trajectory(&self) -> Trajectory {
        Trajectory {
            id: self.id,
            state: CVector::from_column_slice(self.state),
            multiplicity: self.multiplicity,
            batch: self.batch,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    dim: usize,
    pub(crate) ids: Vec<u64>,
    pub(crate) multiplicities: Vec<u64>,
    pub(crate) batches: Vec<u32>,
    pub(crate) amplitudes: Vec<Complex64>,
    n_ref: u64,
    batch_refs: Vec<u64>,
    pub time: f64,
    seed: u64,
    pub(crate) next_id: u64,
}

/// Splits `n` as evenly as possible into `parts` (earlier parts get the remainder).
pub fn even_split(n: u64, parts: usize) -> Vec<u64> {
    let parts = parts.max(1) as u64;
    (0..parts)
        .map(|b| n / parts + u64::from(b < n % parts))
        .collect()
}

/// Largest-remainder rounding of `weights` to integers summing to `n`.
pub fn largest_remainder(weights: &[f64], n: u64) -> Result<Vec<u64>> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || !(total > 0.0) {
        return Err(Error::EmptyDecomposition);
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    Ok(counts)
}

impl Ensemble {
    /// An ensemble with no members whose reference count is still `n_ref`.
    pub fn empty(dim: usize, n_ref: u64, seed: u64, n_batches: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            multiplicities: Vec::new(),
            batches: Vec::new(),
            amplitudes: Vec::new(),
            n_ref,
            batch_refs: even_split(n_ref, n_batches),
            time: 0.0,
            seed,
            next_id: 0,
        }
    }

    /// Single-batch initial ensemble; see [`Ensemble::sample_initial_batched`].
    pub fn sample_initial(decomposition: &[(f64, CVector)], n: u64, seed: u64) -> Result<Self> {
        Self::sample_initial_batched(decomposition, n, seed, 1)
    }

    /// Deterministic proportional allocation of `n` realizations over the
    /// listed pure states. Realization `r` (in state order) is assigned to
    /// batch `r mod n_batches`; one member is created per non-empty
    /// (state, batch) pair.
    pub fn sample_initial_batched(
        decomposition: &[(f64, CVector)],
        n: u64,
        seed: u64,
        n_batches: usize,
    ) -> Result<Self> {
        let dim = decomposition.first().ok_or(Error::EmptyDecomposition)?.1.len();
        if n == 0 || n_batches == 0 {
            return Err(Error::InvalidParameter(
                "initial ensemble needs at least one realization and one batch".into(),
            ));
        }
        let weights: Vec<f64> = decomposition.iter().map(|(w, _)| *w).collect();
        let counts = largest_remainder(&weights, n)?;
        let mut e = Self::empty(dim, n, seed, n_batches);
        let nb = n_batches as u64;
        let mut offset = 0u64;
        for ((_, psi), &count) in decomposition.iter().zip(&counts) {
            if psi.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: psi.len(),
                });
            }
            if count == 0 {
                continue;
            }
            let norm = psi.norm();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::ZeroNorm(norm));
            }
            let state = psi / c(norm, 0.0);
            for b in 0..nb {
                // Realizations r in [offset, offset + count) with r ≡ b (mod nb).
                let first = (b + nb - offset % nb) % nb;
                let in_batch = if first >= count { 0 } else { (count - 1 - first) / nb + 1 };
                if in_batch > 0 {
                    e.push(state.as_slice(), in_batch, b as u32);
                }
            }
            offset += count;
        }
        Ok(e)
    }

    /// Appends a member with a fresh id.
    pub fn push(&mut self, state: &[Complex64], multiplicity: u64, batch: u32) -> u64 {
        assert_eq!(state.len(), self.dim, "state dimension");
        assert!((batch as usize) < self.n_batches(), "batch label out of range");
        let id = self.next_id;
        self.next_id += 1;
        self.push_with_id(id, state, multiplicity, batch);
        id
    }

    pub(crate) fn push_with_id(&mut self, id: u64, state: &[Complex64], multiplicity: u64, batch: u32) {
        debug_assert_eq!(state.len(), self.dim);
        self.ids.push(id);
        self.multiplicities.push(multiplicity);
        self.batches.push(batch);
        self.amplitudes.extend_from_slice(state);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_ref(&self) -> u64 {
        self.n_ref
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_batches(&self) -> usize {
        self.batch_refs.len()
    }

    pub fn batch_refs(&self) -> &[u64] {
        &self.batch_refs
    }

    pub fn member(&self, i: usize) -> Member<'_> {
        Member {
            id: self.ids[i],
            multiplicity: self.multiplicities[i],
            batch: self.batches[i],
            state: &self.amplitudes[i * self.dim..(i + 1) * self.dim],
        }
    }

    pub fn members(&self) -> impl Iterator<Item = Member<'_>> + '_ {
        (0..self.len()).map(move |i| self.member(i))
    }

    /// `Σ_i N_i(t)`
    pub fn total_count(&self) -> u64 {
        self.multiplicities.iter().sum()
    }

    /// `Σ_i N_i(t) / N`
    pub fn trace_estimate(&self) -> f64 {
        self.total_count() as f64 / self.n_ref as f64
    }

    pub fn batch_counts(&self) -> Vec<u64> {
        let mut out = vec![0; self.n_batches()];
        for (m, b) in self.multiplicities.iter().zip(&self.batches) {
            out[*b as usize] += m;
        }
        out
    }

    /// `ρ(t) = Σ_i N_i(t)/N |ψ_i⟩⟨ψ_i|`
    pub fn average_state(&self) -> CMatrix {
        let mut acc = vec![linops::ZERO; self.dim * self.dim];
        for m in self.members() {
            accumulate_outer(&mut acc, m.state, m.multiplicity as f64);
        }
        finish_hermitian(acc, self.dim, 1.0 / self.n_ref as f64)
    }

    /// Per-batch unnormalized sums `Σ_{i∈b} N_i |φ_i⟩⟨φ_i|` with `φ_i = op ψ_i`
    /// (or `ψ_i` when `op` is `None`).
    pub fn batch_outer_sums(&self, op: Option<&linops::SparseOp>) -> Vec<CMatrix> {
        let d = self.dim;
        let mut acc = vec![vec![linops::ZERO; d * d]; self.n_batches()];
        let mut phi = vec![linops::ZERO; d];
        for m in self.members() {
            let v = match op {
                Some(op) => {
                    op.apply_into(m.state, &mut phi);
                    &phi[..]
                }
                None => m.state,
            };
            accumulate_outer(&mut acc[m.batch as usize], v, m.multiplicity as f64);
        }
        acc.into_iter().map(|a| finish_hermitian(a, d, 1.0)).collect()
    }

    pub fn distinct_states(&self) -> usize {
        let set: HashSet<u64> = self.members().map(|m| CanonicalKey::of(m.state).hash64()).collect();
        set.len()
    }

    /// `{key → (total count, index of first member with that key)}`
    pub fn count_snapshot(&self) -> HashMap<CanonicalKey, (u64, usize)> {
        let mut map: HashMap<CanonicalKey, (u64, usize)> = HashMap::new();
        for i in 0..self.len() {
            let m = self.member(i);
            map.entry(CanonicalKey::of(m.state))
                .and_modify(|e| e.0 += m.multiplicity)
                .or_insert((m.multiplicity, i));
        }
        map
    }

    /// Merges members of the same batch whose states share a [`CanonicalKey`];
    /// the first member of each group keeps its id and state.
    pub fn merge_duplicates(&self) -> Ensemble {
        let mut out = Ensemble {
            dim: self.dim,
            ids: Vec::new(),
            multiplicities: Vec::new(),
            batches: Vec::new(),
            amplitudes: Vec::new(),
            n_ref: self.n_ref,
            batch_refs: self.batch_refs.clone(),
            time: self.time,
            seed: self.seed,
            next_id: self.next_id,
        };
        let mut seen: HashMap<(u32, CanonicalKey), usize> = HashMap::new();
        for m in self.members() {
            let key = (m.batch, CanonicalKey::of(m.state));
            match seen.get(&key) {
                Some(&j) => out.multiplicities[j] += m.multiplicity,
                None => {
                    seen.insert(key, out.len());
                    out.push_with_id(m.id, m.state, m.multiplicity, m.batch);
                }
            }
        }
        out
    }

    /// Drops members with multiplicity zero, preserving order.
    pub(crate) fn compact(&mut self) {
        let d = self.dim;
        let mut w = 0;
        for r in 0..self.len() {
            if self.multiplicities[r] == 0 {
                continue;
            }
            if w != r {
                self.ids[w] = self.ids[r];
                self.multiplicities[w] = self.multiplicities[r];
                self.batches[w] = self.batches[r];
                self.amplitudes.copy_within(r * d..(r + 1) * d, w * d);
            }
            w += 1;
        }
        self.ids.truncate(w);
        self.multiplicities.truncate(w);
        self.batches.truncate(w);
        self.amplitudes.truncate(w * d);
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dim: self.dim,
            n_ref: self.n_ref,
            time: self.time,
            seed: self.seed,
            next_id: self.next_id,
            batch_refs: self.batch_refs.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for m in self.members() {
            let line = CheckpointLine {
                id: m.id,
                multiplicity: m.multiplicity,
                batch: m.batch,
                amplitudes: m.state.iter().map(|z| [z.re, z.im]).collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Config("empty checkpoint".into()))??;
        let h: CheckpointHeader = serde_json::from_str(&header_line)?;
        if h.format != CHECKPOINT_FORMAT || h.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint format {} v{}",
                h.format, h.version
            )));
        }
        if h.dim == 0 || h.dim > 4096 {
            return Err(Error::Config(format!("checkpoint dimension {} out of range", h.dim)));
        }
        if h.batch_refs.is_empty() || h.batch_refs.iter().try_fold(0u64, |a, b| a.checked_add(*b)) != Some(h.n_ref) {
            return Err(Error::Config("batch reference counts must sum to n_ref".into()));
        }
        if h.n_ref == 0 || !h.time.is_finite() {
            return Err(Error::Config("checkpoint needs n_ref > 0 and a finite time".into()));
        }
        let mut e = Ensemble::empty(h.dim, h.n_ref, h.seed, h.batch_refs.len());
        e.batch_refs = h.batch_refs;
        e.time = h.time;
        e.next_id = h.next_id;
        let mut ids = HashSet::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: CheckpointLine = serde_json::from_str(&line)?;
            let at = || format!("checkpoint member line {}", lineno + 2);
            if l.amplitudes.len() != h.dim {
                return Err(Error::DimensionMismatch {
                    expected: h.dim,
                    found: l.amplitudes.len(),
                });
            }
            if l.multiplicity == 0 || l.batch as usize >= e.n_batches() {
                return Err(Error::Config(format!("{}: bad multiplicity or batch", at())));
            }
            if l.id >= h.next_id || !ids.insert(l.id) {
                return Err(Error::Config(format!("{}: duplicate or out-of-range id {}", at(), l.id)));
            }
            let state: Vec<Complex64> = l.amplitudes.iter().map(|[re, im]| c(*re, *im)).collect();
            let norm = linops::norm_sqr(&state).sqrt();
            if !((norm - 1.0).abs() <= NORM_TOL) {
                return Err(Error::Config(format!("{}: state norm {norm} is not 1", at())));
            }
            e.push_with_id(l.id, &state, l.multiplicity, l.batch);
        }
        Ok(e)
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        Self::read_checkpoint(text.as_bytes())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    format: String,
    version: u32,
    dim: usize,
    n_ref: u64,
    time: f64,
    seed: u64,
    next_id: u64,
    batch_refs: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointLine {
    id: u64,
    multiplicity: u64,
    batch: u32,
    amplitudes: Vec<[f64; 2]>,
}

/// Adds `w |v⟩⟨v|` to the lower triangle of a column-major buffer.
fn accumulate_outer(acc: &mut [Complex64], v: &[Complex64], w: f64) {
    let d = v.len();
    for j in 0..d {
        let vj = v[j].conj() * w;
        if vj.re == 0.0 && vj.im == 0.0 {
            continue;
        }
        let col = &mut acc[j * d..(j + 1) * d];
        for i in j..d {
            col[i] += v[i] * vj;
        }
    }
}

fn finish_hermitian(mut acc: Vec<Complex64>, d: usize, scale: f64) -> CMatrix {
    for j in 0..d {
        for i in j..d {
            let z = acc[j * d + i] * scale;
            acc[j * d + i] = z;
            acc[i * d + j] = z.conj();
        }
        acc[j * d + j].im = 0.0;
    }
    CMatrix::from_vec(d, d, acc)
}

/// Stream offsets separating the different consumers of randomness.
pub const SOURCE_STREAM: u64 = 1 << 62;
pub const BOOTSTRAP_STREAM: u64 = 1 << 63;

/// Counter-based random streams: every (stream, counter) pair addresses a
/// disjoint block of the ChaCha8 key stream derived from the seed.
#[derive(Clone)]
pub struct RngStreams {
    template: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            template: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn at(&self, stream: u64, counter: u64) -> ChaCha8Rng {
        let mut rng = self.template.clone();
        rng.set_stream(stream);
        rng.set_word_pos(u128::from(counter) << 24);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{basis, max_abs, projector};
    use rand::Rng;

    fn plus() -> CVector {
        (basis(2, 0) + basis(2, 1)).normalize()
    }

    #[test]
    fn average_state_examples() {
        let e = Ensemble::sample_initial(&[(0.5, basis(2, 0)), (0.5, basis(2, 1))], 10_000, 1).unwrap();
        assert!(max_abs(&(e.average_state() - linops::identity(2) * c(0.5, 0.0))) < 1e-15);

        let empty = Ensemble::empty(2, 10_000, 1, 1);
        assert!(max_abs(&empty.average_state()) == 0.0);
        assert_eq!(empty.trace_estimate(), 0.0);

        let mut e = Ensemble::sample_initial(&[(1.0, plus())], 10_000, 1).unwrap();
        e.push(plus().as_slice(), 2000, 0);
        assert!(max_abs(&(e.average_state() - projector(&plus()) * c(1.2, 0.0))) < 1e-14);
        assert_eq!(e.trace_estimate(), 1.2);
        assert_eq!(e.total_count(), 12_000);
    }

    #[test]
    fn initial_allocation() {
        let e = Ensemble::sample_initial(&[(1.0, plus())], 10_000, 3).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e.member(0).multiplicity, 10_000);
        assert_eq!(e.trace_estimate(), 1.0);

        let third = 1.0 / 3.0;
        let e = Ensemble::sample_initial(
            &[(third, basis(3, 0)), (third, basis(3, 1)), (third, basis(3, 2))],
            10,
            3,
        )
        .unwrap();
        let counts: Vec<u64> = e.members().map(|m| m.multiplicity).collect();
        assert_eq!(counts, vec![4, 3, 3]);

        let e = Ensemble::sample_initial(&[(0.5, basis(2, 0)), (0.5, basis(2, 1))], 10, 3).unwrap();
        assert_eq!(e.members().map(|m| m.multiplicity).collect::<Vec<_>>(), vec![5, 5]);

        assert!(matches!(
            Ensemble::sample_initial(&[], 10, 0),
            Err(Error::EmptyDecomposition)
        ));
        assert!(matches!(
            Ensemble::sample_initial(&[(0.0, basis(2, 0))], 10, 0),
            Err(Error::EmptyDecomposition)
        ));
    }

    #[test]
    fn batched_allocation_splits_realizations() {
        let e = Ensemble::sample_initial_batched(&[(0.7, basis(2, 0)), (0.3, basis(2, 1))], 103, 0, 10).unwrap();
        assert_eq!(e.total_count(), 103);
        assert_eq!(e.batch_refs().iter().sum::<u64>(), 103);
        assert_eq!(e.batch_counts(), e.batch_refs().to_vec());
        let sums = e.batch_outer_sums(None);
        let total: CMatrix = sums.iter().fold(CMatrix::zeros(2, 2), |a, b| a + b);
        assert!(max_abs(&(total / c(103.0, 0.0) - e.average_state())) < 1e-14);
    }

    #[test]
    fn keys_ignore_global_phase() {
        let psi = plus();
        let rotated = &psi * Complex64::from_polar(1.0, 1.234);
        assert_eq!(CanonicalKey::of(psi.as_slice()), CanonicalKey::of(rotated.as_slice()));
        assert_ne!(
            CanonicalKey::of(psi.as_slice()),
            CanonicalKey::of(basis(2, 0).as_slice())
        );
    }

    #[test]
    fn merging_duplicates() {
        let mut e = Ensemble::empty(2, 10, 0, 1);
        e.push(plus().as_slice(), 3, 0);
        e.push((plus() * Complex64::from_polar(1.0, 0.3)).as_slice(), 4, 0);
        let merged = e.merge_duplicates();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged.member(0).multiplicity, 7);
        assert!(max_abs(&(merged.average_state() - e.average_state())) < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut e = Ensemble::empty(3, 50, 0, 1);
        for _ in 0..20 {
            let v = CVector::from_fn(3, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).normalize();
            e.push(v.as_slice(), rng.random_range(1..5), 0);
        }
        let merged = e.merge_duplicates();
        assert_eq!(merged.len(), e.len());
        assert!(max_abs(&(merged.average_state() - e.average_state())) < 1e-10);
    }

    #[test]
    fn compact_drops_empty_members() {
        let mut e = Ensemble::empty(2, 10, 0, 1);
        e.push(basis(2, 0).as_slice(), 1, 0);
        e.push(basis(2, 1).as_slice(), 2, 0);
        e.push(plus().as_slice(), 3, 0);
        e.multiplicities[1] = 0;
        e.compact();
        assert_eq!(e.len(), 2);
        assert_eq!(e.member(1).id, 2);
        assert_eq!(e.member(1).state, plus().as_slice());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut e = Ensemble::sample_initial_batched(&[(0.6, plus()), (0.4, basis(2, 1))], 20, 77, 3).unwrap();
        e.time = 0.25;
        let mut buf = Vec::new();
        e.write_checkpoint(&mut buf).unwrap();
        let back = Ensemble::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.len(), e.len());
        assert_eq!(back.time, 0.25);
        assert_eq!(back.seed(), 77);
        assert_eq!(back.batch_refs(), e.batch_refs());
        for (a, b) in back.members().zip(e.members()) {
            assert_eq!(a.to_trajectory(), b.to_trajectory());
        }
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.push(lines[1]);
        assert!(Ensemble::from_checkpoint_str(&lines.join("\n")).is_err());
        assert!(Ensemble::from_checkpoint_str("").is_err());
        assert!(Ensemble::from_checkpoint_str("{}").is_err());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let s = RngStreams::new(42);
        let a: u64 = s.at(3, 10).random();
        let b: u64 = s.at(3, 10).random();
        let other: u64 = s.at(4, 10).random();
        let later: u64 = s.at(3, 11).random();
        assert_eq!(a, b);
        assert_ne!(a, other);
        assert_ne!(a, later);
    }
}
