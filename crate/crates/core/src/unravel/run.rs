//! Time-synchronous ensemble stepping.
//!
//! Within a step every member is advanced independently against the same
//! frozen generator and reverse-jump table; new members are appended at the
//! barrier in member order, so results do not depend on the worker count.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use super::{Method, ReverseTable, SourceSpectrum, StepContext, StepSettings, Workspace};
use crate::ensemble::{Ensemble, RngStreams, BOOTSTRAP_STREAM, SOURCE_STREAM};
use crate::error::{Error, Result};
use crate::exact::TimeGrid;
use crate::linops::{self, c, CMatrix};
use crate::model::TnpModel;
use crate::stats;

const CHUNK: usize = 512;

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub method: Method,
    pub reverse_jumps: bool,
    /// Record every this many steps (the final time is always recorded).
    pub record_every: usize,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    pub max_event_probability: f64,
    /// Merge identical states within a batch after every step.
    pub merge_duplicates: bool,
    /// Keep per-batch state sums at record times.
    pub record_states: bool,
    pub count_distinct: bool,
    pub bootstrap_resamples: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            method: Method::Mcwf,
            reverse_jumps: false,
            record_every: 1,
            threads: None,
            max_event_probability: super::DEFAULT_MAX_EVENT_PROBABILITY,
            merge_duplicates: false,
            record_states: true,
            count_distinct: true,
            bootstrap_resamples: 200,
        }
    }
}

/// Where inhomogeneous creations come from.
pub enum SourceMode<'a> {
    /// The model's own source term, if any.
    Model,
    /// A per-batch source `f(step, t, batch)`.
    PerBatch(&'a (dyn Fn(usize, f64, usize) -> Result<Option<CMatrix>> + Sync)),
}

#[derive(Clone, Debug)]
pub struct RecordPoint {
    pub step: usize,
    pub t: f64,
    pub batch_counts: Vec<u64>,
    /// `Σ_{i∈b} N_i |ψ_i⟩⟨ψ_i|` per batch.
    pub batch_states: Option<Vec<CMatrix>>,
    pub distinct: Option<usize>,
    pub members: usize,
}

impl RecordPoint {
    pub fn total_count(&self) -> u64 {
        self.batch_counts.iter().sum()
    }
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub n_ref: u64,
    pub batch_refs: Vec<u64>,
    pub seed: u64,
    pub resamples: usize,
    pub points: Vec<RecordPoint>,
    /// Accumulated reverse-jump weight whose target had no realizations.
    pub unmatched_reverse: f64,
}

impl RunRecord {
    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn trace(&self, i: usize) -> f64 {
        self.points[i].total_count() as f64 / self.n_ref as f64
    }

    pub fn average_state(&self, i: usize) -> Option<CMatrix> {
        let states = self.points[i].batch_states.as_ref()?;
        let sum = states.iter().fold(CMatrix::zeros(states[0].nrows(), states[0].ncols()), |a, b| a + b);
        Some(sum * c(1.0 / self.n_ref as f64, 0.0))
    }

    fn bootstrap(&self, i: usize, num: &[f64]) -> f64 {
        let den: Vec<f64> = self.batch_refs.iter().map(|&n| n as f64).collect();
        let mut rng = RngStreams::new(self.seed).at(BOOTSTRAP_STREAM, i as u64);
        stats::bootstrap_ratio_se(num, &den, self.resamples, &mut rng)
    }

    /// Bootstrap standard error of the trace estimate at point `i`.
    pub fn trace_se(&self, i: usize) -> f64 {
        let num: Vec<f64> = self.points[i].batch_counts.iter().map(|&n| n as f64).collect();
        self.bootstrap(i, &num)
    }

    /// Estimate and bootstrap standard error of `f(ρ(t_i))` for a linear `f`.
    pub fn functional(&self, i: usize, f: impl Fn(&CMatrix) -> f64) -> Option<(f64, f64)> {
        let states = self.points[i].batch_states.as_ref()?;
        let num: Vec<f64> = states.iter().map(&f).collect();
        let est = num.iter().sum::<f64>() / self.n_ref as f64;
        Some((est, self.bootstrap(i, &num)))
    }

    /// `tr[A ρ(t_i)]` with its standard error.
    pub fn expectation(&self, i: usize, a: &CMatrix) -> Option<(f64, f64)> {
        self.functional(i, |s| linops::trace(&(a * s)).re)
    }
}

/// Runs `ensemble` over `grid` with the model's own source term.
pub fn run(model: &TnpModel, ensemble: Ensemble, grid: &TimeGrid, options: &RunOptions) -> Result<(Ensemble, RunRecord)> {
    run_with(model, ensemble, grid, options, SourceMode::Model, &mut |_, _| Ok(()))
}

/// Full runner; `observer(step, ensemble)` sees the state at every grid point.
pub fn run_with(
    model: &TnpModel,
    mut ensemble: Ensemble,
    grid: &TimeGrid,
    options: &RunOptions,
    source: SourceMode,
    observer: &mut dyn FnMut(usize, &Ensemble) -> Result<()>,
) -> Result<(Ensemble, RunRecord)> {
    model.validate()?;
    grid.validate()?;
    if ensemble.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: ensemble.dim(),
        });
    }
    if options.record_every == 0 {
        return Err(Error::InvalidParameter("record_every must be at least 1".into()));
    }
    let settings = StepSettings {
        dt: grid.dt,
        reverse_jumps: options.reverse_jumps,
        max_event_probability: options.max_event_probability,
    };
    settings.validate()?;

    let pool = match options.threads {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        ),
        None => None,
    };

    let mut record = RunRecord {
        n_ref: ensemble.n_ref(),
        batch_refs: ensemble.batch_refs().to_vec(),
        seed: ensemble.seed(),
        resamples: options.bootstrap_resamples,
        points: Vec::new(),
        unmatched_reverse: 0.0,
    };
    let streams = RngStreams::new(ensemble.seed());
    let steps = grid.steps();
    ensemble.time = grid.t0;
    for k in 0..=steps {
        if k % options.record_every == 0 || k == steps {
            record.points.push(record_point(&ensemble, k, grid.time(k), options));
        }
        observer(k, &ensemble)?;
        if k == steps {
            break;
        }
        let t = grid.time(k);
        let mut advance = || step(model, &mut ensemble, k, t, &settings, options, &source, &streams);
        let unmatched = match &pool {
            Some(p) => p.install(advance)?,
            None => advance()?,
        };
        record.unmatched_reverse += unmatched;
        ensemble.time = grid.time(k + 1);
    }
    Ok((ensemble, record))
}

fn record_point(e: &Ensemble, step: usize, t: f64, options: &RunOptions) -> RecordPoint {
    RecordPoint {
        step,
        t,
        batch_counts: e.batch_counts(),
        batch_states: options.record_states.then(|| e.batch_outer_sums(None)),
        distinct: options.count_distinct.then(|| e.distinct_states()),
        members: e.len(),
    }
}

/// A new realization: `(state, multiplicity)`.
type Created = (Vec<Complex64>, u64);

#[derive(Default)]
struct ChunkOut {
    /// `(multiplicity, batch)` per child, states in `states`.
    children: Vec<(u64, u32)>,
    states: Vec<Complex64>,
}

#[allow(clippy::too_many_arguments)]
fn step(
    model: &TnpModel,
    e: &mut Ensemble,
    k: usize,
    t: f64,
    settings: &StepSettings,
    options: &RunOptions,
    source: &SourceMode,
    streams: &RngStreams,
) -> Result<f64> {
    let g = model.at(t);
    let needs_table = options.reverse_jumps
        && match &options.method {
            Method::Mcwf => g.channels.iter().any(|ch| ch.rate < 0.0),
            Method::RateOperator(_) => true,
        };
    let table = if needs_table && !e.is_empty() {
        Some(ReverseTable::build(&g, &options.method, e, settings.dt)?)
    } else {
        None
    };
    let ctx = StepContext {
        g: &g,
        settings: *settings,
        method: &options.method,
        reverse: table.as_ref(),
    };
    let d = e.dim();
    let n_channels = g.channels.len();
    let counter = k as u64;

    let outs: Vec<Result<ChunkOut>> = e
        .amplitudes
        .par_chunks_mut(CHUNK * d)
        .zip(e.multiplicities.par_chunks_mut(CHUNK))
        .zip(e.ids.par_chunks(CHUNK))
        .zip(e.batches.par_chunks(CHUNK))
        .map(|(((amps, mults), ids), batches)| {
            let mut ws = Workspace::new(d, n_channels);
            let mut out = ChunkOut::default();
            for i in 0..ids.len() {
                let mut rng = streams.at(ids[i], counter);
                advance_member(
                    &ctx,
                    &mut ws,
                    &mut rng,
                    &mut amps[i * d..(i + 1) * d],
                    &mut mults[i],
                    batches[i],
                    &mut out,
                )?;
            }
            Ok(out)
        })
        .collect();

    for out in outs {
        let out = out?;
        for (n, (m, b)) in out.children.iter().enumerate() {
            e.push(&out.states[n * d..(n + 1) * d], *m, *b);
        }
    }
    e.compact();

    match source {
        SourceMode::Model => {
            if let Some(s) = model.source_value(t) {
                let spec = SourceSpectrum::new(&s)?;
                for (b, &nb) in e.batch_refs().to_vec().iter().enumerate() {
                    let mut rng = streams.at(SOURCE_STREAM + b as u64, counter);
                    for (i, m) in spec.draw(nb, settings.dt, &mut rng) {
                        e.push(spec.states[i].as_slice(), m, b as u32);
                    }
                }
            }
        }
        SourceMode::PerBatch(f) => {
            let refs = e.batch_refs().to_vec();
            let created: Vec<Result<Vec<Created>>> = (0..refs.len())
                .into_par_iter()
                .map(|b| {
                    let Some(s) = f(k, t, b)? else {
                        return Ok(Vec::new());
                    };
                    let spec = SourceSpectrum::new(&s)?;
                    let mut rng = streams.at(SOURCE_STREAM + b as u64, counter);
                    Ok(spec
                        .draw(refs[b], settings.dt, &mut rng)
                        .into_iter()
                        .map(|(i, m)| (spec.states[i].as_slice().to_vec(), m))
                        .collect())
                })
                .collect();
            for (b, list) in created.into_iter().enumerate() {
                for (state, m) in list? {
                    e.push(&state, m, b as u32);
                }
            }
        }
    }

    if options.merge_duplicates {
        *e = e.merge_duplicates();
    }
    Ok(table.map_or(0.0, |t| t.unmatched))
}

/// Advances one member of multiplicity `*mult` in place; extra groups become children.
fn advance_member<R: Rng>(
    ctx: &StepContext,
    ws: &mut Workspace,
    rng: &mut R,
    psi: &mut [Complex64],
    mult: &mut u64,
    batch: u32,
    out: &mut ChunkOut,
) -> Result<()> {
    let m = *mult;
    if m == 0 {
        return Ok(());
    }
    ws.evaluate(ctx, psi)?;
    ws.split(m, rng);
    let nf = ws.forward.len();
    let nr = ws.reverse.len();
    let n_vr = ws.counts[nf + nr];
    let n_det = ws.counts[nf + nr + 1];
    let n_c = if ws.p_c > 0.0 { n_vr } else { 0 };
    let first_child = out.children.len();
    let keep = n_det + n_c;
    if keep > 0 {
        ws.deterministic(ctx, psi)?;
        psi.copy_from_slice(&ws.det);
        if n_c > 0 {
            out.children.push((n_c, batch));
            out.states.extend_from_slice(&ws.det);
        }
    }
    for (f, &n) in ws.forward.iter().zip(&ws.counts[..nf]) {
        if n > 0 {
            let inv = 1.0 / ws.target_norms[f.slot];
            out.children.push((n, batch));
            out.states.extend(ws.target(f.slot).iter().map(|z| z * inv));
        }
    }
    if let Some(table) = ctx.reverse {
        for (&(entry, _), &n) in ws.reverse.iter().zip(&ws.counts[nf..nf + nr]) {
            if n > 0 {
                out.children.push((n, batch));
                out.states.extend_from_slice(table.source_state(entry));
            }
        }
    }
    if keep > 0 {
        *mult = keep;
    } else if out.children.len() > first_child {
        // Reuse this member for the first outcome group.
        let d = psi.len();
        let (n, _) = out.children.remove(first_child);
        psi.copy_from_slice(&out.states[first_child * d..(first_child + 1) * d]);
        out.states.drain(first_child * d..(first_child + 1) * d);
        *mult = n;
    } else {
        *mult = 0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact;
    use crate::linops::{basis, projector};
    use crate::model::builders::pauli_ops;
    use crate::model::{Decay, JumpChannel, OpSchedule, SourceTerm};

    fn plus() -> linops::CVector {
        linops::CVector::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]) / c(2f64.sqrt(), 0.0)
    }

    fn check_against_exact(model: &TnpModel, options: &RunOptions, n: u64, t1: f64) {
        check_mixture(model, options, &[(1.0, plus())], n, t1)
    }

    fn check_mixture(model: &TnpModel, options: &RunOptions, init: &[(f64, linops::CVector)], n: u64, t1: f64) {
        let grid = TimeGrid::new(0.0, t1, 1e-3).unwrap();
        let e = Ensemble::sample_initial_batched(init, n, 11, 20).unwrap();
        let (_, rec) = run(model, e, &grid, options).unwrap();
        let rho0 = init.iter().fold(CMatrix::zeros(2, 2), |a, (w, v)| a + projector(v) * c(*w, 0.0));
        let rho = exact::integrate(model, &rho0, &grid).unwrap();
        let z = pauli_ops().z;
        let i = rec.points.len() - 1;
        let want = rho.last();
        let tr_se = rec.trace_se(i).max(1e-4);
        assert!((rec.trace(i) - linops::trace(want).re).abs() < 5.0 * tr_se, "trace {} vs {}", rec.trace(i), linops::trace(want).re);
        let (ez, se) = rec.expectation(i, &z).unwrap();
        let wz = linops::trace(&(&z * want)).re;
        assert!((ez - wz).abs() < 5.0 * se.max(1e-4), "z {ez} vs {wz}");
    }

    #[test]
    fn disappearance_tracks_exact_solution() {
        let p = pauli_ops();
        let model = TnpModel::new(2)
            .with_hamiltonian(p.x.clone() * c(0.5, 0.0))
            .with_channel(JumpChannel::new("decay", 1.0, p.minus.clone()))
            .with_decay(Decay::LindbladPlus(OpSchedule::Constant(p.identity.clone() * c(0.3, 0.0))));
        check_against_exact(&model, &RunOptions::default(), 4000, 0.5);
    }

    #[test]
    fn replication_tracks_exact_solution() {
        let p = pauli_ops();
        let model = TnpModel::new(2)
            .with_channel(JumpChannel::new("decay", 1.0, p.minus.clone()))
            .with_decay(Decay::LindbladPlus(OpSchedule::Constant(p.z.clone() * c(-0.4, 0.0))));
        check_against_exact(&model, &RunOptions::default(), 4000, 0.5);
    }

    #[test]
    fn reverse_jumps_track_exact_solution() {
        let p = pauli_ops();
        let model = TnpModel::new(2)
            .with_channel(JumpChannel::new("decay", 1.0, p.minus.clone()))
            .with_channel(JumpChannel::new("undo", -0.3, p.minus.clone()));
        let options = RunOptions {
            reverse_jumps: true,
            ..Default::default()
        };
        // The reverse target must be populated from the start.
        let init = [(0.5, plus()), (0.5, basis(2, 0))];
        check_mixture(&model, &options, &init, 4000, 0.5);
        let ro = RunOptions {
            method: Method::RateOperator(Default::default()),
            ..options
        };
        check_mixture(&model, &ro, &init, 4000, 0.5);
    }

    #[test]
    fn source_adds_realizations() {
        let model = TnpModel::new(2).with_source(Some(SourceTerm {
            value: OpSchedule::Constant(projector(&basis(2, 0)) * c(0.5, 0.0)),
        }));
        check_against_exact(&model, &RunOptions::default(), 4000, 0.5);
    }

    #[test]
    fn result_independent_of_thread_count() {
        let p = pauli_ops();
        let model = TnpModel::new(2)
            .with_hamiltonian(p.x.clone())
            .with_channel(JumpChannel::new("decay", 1.0, p.minus.clone()))
            .with_decay(Decay::LindbladPlus(OpSchedule::Constant(p.z.clone() * c(-0.4, 0.0))));
        let grid = TimeGrid::new(0.0, 0.3, 1e-3).unwrap();
        let go = |threads| {
            let e = Ensemble::sample_initial_batched(&[(1.0, plus())], 3000, 5, 10).unwrap();
            let options = RunOptions {
                threads: Some(threads),
                ..Default::default()
            };
            run(&model, e, &grid, &options).unwrap()
        };
        let (a, ra) = go(1);
        let (b, rb) = go(3);
        assert_eq!(a.len(), b.len());
        assert_eq!(ra.points.last().unwrap().batch_counts, rb.points.last().unwrap().batch_counts);
        for (x, y) in a.members().zip(b.members()) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.state, y.state);
        }
    }

    #[test]
    fn zero_record_interval_rejected() {
        let e = Ensemble::sample_initial(&[(1.0, plus())], 10, 0).unwrap();
        let options = RunOptions {
            record_every: 0,
            ..Default::default()
        };
        let grid = TimeGrid::new(0.0, 0.1, 1e-2).unwrap();
        assert!(run(&TnpModel::new(2), e, &grid, &options).is_err());
    }
}
