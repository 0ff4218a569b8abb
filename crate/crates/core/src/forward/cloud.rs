use std::sync::Arc;

use rayon::prelude::*;

use super::{CouplingMode, ForwardModel, StepScratch};
use crate::error::{Error, Result};
use crate::rng::{Domain, StreamFactory};
use crate::timegrid::{alpha_map, embedding, TimeGrid};

/// Grids of one level together with the index maps between them.
#[derive(Debug, Clone)]
pub struct LevelLayout {
    pub d: usize,
    pub q: usize,
    pub fine: TimeGrid,
    pub coarse: Option<TimeGrid>,
    /// `alpha[i]` for `i = 0..=2^k`, empty without a coarse grid.
    pub alpha: Vec<usize>,
    /// Fine index of each coarse point.
    pub embed: Vec<usize>,
}

impl LevelLayout {
    pub fn new(d: usize, q: usize, fine: TimeGrid, coarse: Option<TimeGrid>) -> Result<Self> {
        let (alpha, embed) = match &coarse {
            Some(c) => {
                if fine.level() == 0 {
                    return Err(Error::InvalidGrid("level 0 has no coarse grid".into()));
                }
                if c.level() + 1 != fine.level() {
                    return Err(Error::InvalidGrid(format!(
                        "coarse grid level {} does not precede fine level {}",
                        c.level(),
                        fine.level()
                    )));
                }
                (alpha_map(&fine, c), embedding(&fine, c)?)
            }
            None => (Vec::new(), Vec::new()),
        };
        Ok(Self { d, q, fine, coarse, alpha, embed })
    }

    pub fn steps(&self) -> usize {
        self.fine.steps()
    }

    pub fn coarse_steps(&self) -> usize {
        self.coarse.as_ref().map_or(0, |c| c.steps())
    }

    pub fn new_path(&self) -> LevelPath {
        let n = self.steps();
        let nc = self.coarse_steps();
        let has_coarse = self.coarse.is_some();
        LevelPath {
            fine: vec![0.0; (n + 1) * self.d],
            dw: vec![0.0; n * self.q],
            coarse: if has_coarse { vec![0.0; (nc + 1) * self.d] } else { Vec::new() },
            coarse_dw: if has_coarse { vec![0.0; nc * self.q] } else { Vec::new() },
            scratch: StepScratch::default(),
        }
    }
}

/// One path bundle of a level: fine states, fine increments and (when a
/// coarse grid exists) the coupled coarse states and coarse increments.
#[derive(Debug, Clone)]
pub struct LevelPath {
    pub fine: Vec<f64>,
    pub dw: Vec<f64>,
    pub coarse: Vec<f64>,
    pub coarse_dw: Vec<f64>,
    pub(crate) scratch: StepScratch,
}

impl LevelPath {
    #[inline]
    pub fn state(&self, i: usize, d: usize) -> &[f64] {
        &self.fine[i * d..(i + 1) * d]
    }

    #[inline]
    pub fn increment(&self, i: usize, q: usize) -> &[f64] {
        &self.dw[i * q..(i + 1) * q]
    }

    #[inline]
    pub fn coarse_state(&self, j: usize, d: usize) -> &[f64] {
        &self.coarse[j * d..(j + 1) * d]
    }

    #[inline]
    pub fn coarse_increment(&self, j: usize, q: usize) -> &[f64] {
        &self.coarse_dw[j * q..(j + 1) * q]
    }
}

/// Anything that can hand out the path bundles of a level by index: either
/// a generator that simulates on demand or a materialized cloud.
pub trait LevelSource: Sync {
    fn layout(&self) -> &LevelLayout;
    fn paths(&self) -> usize;
    fn fill(&self, m: usize, out: &mut LevelPath);
}

/// Simulates path bundles on demand from counter-based streams.
#[derive(Debug, Clone)]
pub struct CloudGenerator {
    model: Arc<ForwardModel>,
    layout: LevelLayout,
    paths: usize,
    seed: u64,
    mode: CouplingMode,
    streams: StreamFactory,
}

impl CloudGenerator {
    pub fn new(
        model: Arc<ForwardModel>,
        fine: TimeGrid,
        coarse: Option<TimeGrid>,
        paths: usize,
        seed: u64,
        domain: Domain,
        mode: CouplingMode,
    ) -> Result<Self> {
        if paths == 0 {
            return Err(Error::Schedule("a cloud needs at least one path".into()));
        }
        model.check_mode(mode)?;
        let layout = LevelLayout::new(model.dim(), model.brownian_dim(), fine, coarse)?;
        Ok(Self { streams: StreamFactory::new(seed, domain), model, layout, paths, seed, mode })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> CouplingMode {
        self.mode
    }

    pub fn model(&self) -> &Arc<ForwardModel> {
        &self.model
    }

    pub fn materialize(&self) -> SimulationCloud {
        SimulationCloud::from_source(self, self.seed, self.mode)
    }
}

impl LevelSource for CloudGenerator {
    fn layout(&self) -> &LevelLayout {
        &self.layout
    }

    fn paths(&self) -> usize {
        self.paths
    }

    fn fill(&self, m: usize, out: &mut LevelPath) {
        let model = &*self.model;
        let LevelLayout { d, q, fine, coarse, alpha, embed } = &self.layout;
        let (d, q) = (*d, *q);
        model.ensure_scratch(&mut out.scratch);
        let mut rng = self.streams.path(m as u64);
        let n = fine.steps();
        let exact = self.mode == CouplingMode::Exact;
        out.fine[..d].copy_from_slice(model.x0());
        for i in 0..n {
            let dt = fine.increment(i);
            let sq = dt.sqrt();
            let w = &mut out.dw[i * q..(i + 1) * q];
            rng.fill_normal(w);
            for v in w.iter_mut() {
                *v *= sq;
            }
            let (head, tail) = out.fine.split_at_mut((i + 1) * d);
            tail[..d].copy_from_slice(&head[i * d..]);
            model.step(exact, fine.time(i), dt, &mut tail[..d], &out.dw[i * q..(i + 1) * q], &mut out.scratch);
        }
        if let Some(coarse) = coarse {
            out.coarse_dw.fill(0.0);
            for i in 0..n {
                let j = alpha[i];
                for c in 0..q {
                    out.coarse_dw[j * q + c] += out.dw[i * q + c];
                }
            }
            match self.mode {
                CouplingMode::Exact | CouplingMode::EulerSubsample => {
                    for (j, &i) in embed.iter().enumerate() {
                        out.coarse[j * d..(j + 1) * d].copy_from_slice(&out.fine[i * d..(i + 1) * d]);
                    }
                }
                CouplingMode::EulerCoupled => {
                    out.coarse[..d].copy_from_slice(model.x0());
                    for j in 0..coarse.steps() {
                        let (head, tail) = out.coarse.split_at_mut((j + 1) * d);
                        tail[..d].copy_from_slice(&head[j * d..]);
                        model.step(
                            false,
                            coarse.time(j),
                            coarse.increment(j),
                            &mut tail[..d],
                            &out.coarse_dw[j * q..(j + 1) * q],
                            &mut out.scratch,
                        );
                    }
                }
            }
        }
    }
}

/// A materialized cloud, stored as `[i][m][component]` arrays.
#[derive(Debug, Clone)]
pub struct SimulationCloud {
    pub(crate) layout: LevelLayout,
    pub(crate) paths: usize,
    pub(crate) seed: u64,
    pub(crate) mode: CouplingMode,
    pub(crate) fine: Vec<f64>,
    pub(crate) dw: Vec<f64>,
    pub(crate) coarse: Vec<f64>,
    pub(crate) coarse_dw: Vec<f64>,
}

impl SimulationCloud {
    fn from_source(source: &dyn LevelSource, seed: u64, mode: CouplingMode) -> Self {
        let layout = source.layout().clone();
        let m_total = source.paths();
        let (d, q) = (layout.d, layout.q);
        let n = layout.steps();
        let nc = layout.coarse_steps();
        let has_coarse = layout.coarse.is_some();
        let mut cloud = SimulationCloud {
            fine: vec![0.0; (n + 1) * m_total * d],
            dw: vec![0.0; n * m_total * q],
            coarse: if has_coarse { vec![0.0; (nc + 1) * m_total * d] } else { Vec::new() },
            coarse_dw: if has_coarse { vec![0.0; nc * m_total * q] } else { Vec::new() },
            layout,
            paths: m_total,
            seed,
            mode,
        };
        const CHUNK: usize = 1024;
        let chunks: Vec<Vec<LevelPath>> = (0..m_total.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let range = c * CHUNK..((c + 1) * CHUNK).min(m_total);
                range
                    .map(|m| {
                        let mut p = cloud.layout.new_path();
                        source.fill(m, &mut p);
                        p
                    })
                    .collect()
            })
            .collect();
        for (m, p) in chunks.into_iter().flatten().enumerate() {
            for i in 0..=n {
                cloud.fine[(i * m_total + m) * d..][..d].copy_from_slice(&p.fine[i * d..(i + 1) * d]);
            }
            for i in 0..n {
                cloud.dw[(i * m_total + m) * q..][..q].copy_from_slice(&p.dw[i * q..(i + 1) * q]);
            }
            if has_coarse {
                for j in 0..=nc {
                    cloud.coarse[(j * m_total + m) * d..][..d].copy_from_slice(&p.coarse[j * d..(j + 1) * d]);
                }
                for j in 0..nc {
                    cloud.coarse_dw[(j * m_total + m) * q..][..q].copy_from_slice(&p.coarse_dw[j * q..(j + 1) * q]);
                }
            }
        }
        cloud
    }

    pub fn level(&self) -> usize {
        self.layout.fine.level()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> CouplingMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.layout.d
    }

    pub fn brownian_dim(&self) -> usize {
        self.layout.q
    }

    pub fn has_coarse(&self) -> bool {
        self.layout.coarse.is_some()
    }

    pub fn fine_state(&self, i: usize, m: usize) -> &[f64] {
        let d = self.layout.d;
        &self.fine[(i * self.paths + m) * d..][..d]
    }

    pub fn coarse_state(&self, j: usize, m: usize) -> &[f64] {
        let d = self.layout.d;
        &self.coarse[(j * self.paths + m) * d..][..d]
    }

    pub fn increment(&self, i: usize, m: usize) -> &[f64] {
        let q = self.layout.q;
        &self.dw[(i * self.paths + m) * q..][..q]
    }

    pub fn coarse_increment(&self, j: usize, m: usize) -> &[f64] {
        let q = self.layout.q;
        &self.coarse_dw[(j * self.paths + m) * q..][..q]
    }
}

impl LevelSource for SimulationCloud {
    fn layout(&self) -> &LevelLayout {
        &self.layout
    }

    fn paths(&self) -> usize {
        self.paths
    }

    fn fill(&self, m: usize, out: &mut LevelPath) {
        let (d, q) = (self.layout.d, self.layout.q);
        let n = self.layout.steps();
        for i in 0..=n {
            out.fine[i * d..(i + 1) * d].copy_from_slice(self.fine_state(i, m));
        }
        for i in 0..n {
            out.dw[i * q..(i + 1) * q].copy_from_slice(self.increment(i, m));
        }
        if self.has_coarse() {
            let nc = self.layout.coarse_steps();
            for j in 0..=nc {
                out.coarse[j * d..(j + 1) * d].copy_from_slice(self.coarse_state(j, m));
            }
            for j in 0..nc {
                out.coarse_dw[j * q..(j + 1) * q].copy_from_slice(self.coarse_increment(j, m));
            }
        }
    }
}

/// Simulates and stores the regression cloud of level `k = fine.level()`.
/// `mode = None` selects the model's default mode.
pub fn simulate_cloud(
    model: &Arc<ForwardModel>,
    fine: &TimeGrid,
    coarse: Option<&TimeGrid>,
    paths: usize,
    seed: u64,
    mode: Option<CouplingMode>,
) -> Result<SimulationCloud> {
    let mode = mode.unwrap_or_else(|| model.default_mode());
    let gen = CloudGenerator::new(
        model.clone(),
        fine.clone(),
        coarse.cloned(),
        paths,
        seed,
        Domain::Level(fine.level() as u32),
        mode,
    )?;
    Ok(gen.materialize())
}

/// Tail of a path starting at time index `start`: states `X_start..X_N`
/// and the single increment `dW_start`.
#[derive(Debug, Clone)]
pub struct TailPath {
    pub states: Vec<f64>,
    pub dw: Vec<f64>,
    pub(crate) scratch: StepScratch,
    pub(crate) tmp: Vec<f64>,
}

impl TailPath {
    /// State at absolute time index `j`, for a tail starting at `start`.
    #[inline]
    pub fn state(&self, start: usize, j: usize, d: usize) -> &[f64] {
        &self.states[(j - start) * d..(j - start + 1) * d]
    }
}

pub trait TailSource: Sync {
    fn grid(&self) -> &TimeGrid;
    fn start(&self) -> usize;
    fn dims(&self) -> (usize, usize);
    fn paths(&self) -> usize;
    fn fill(&self, m: usize, out: &mut TailPath);

    fn new_path(&self) -> TailPath {
        let (d, q) = self.dims();
        let len = self.grid().steps() - self.start() + 1;
        TailPath { states: vec![0.0; len * d], dw: vec![0.0; q], scratch: StepScratch::default(), tmp: vec![0.0; q] }
    }
}

/// The independent per-time-point clouds `C_{k,i}` of one grid.
#[derive(Debug, Clone)]
pub struct TimePointClouds {
    model: Arc<ForwardModel>,
    grid: TimeGrid,
    counts: Vec<usize>,
    seed: u64,
    mode: CouplingMode,
    domain: Option<Domain>,
}

impl TimePointClouds {
    /// Draws every time point from `domain` instead of its own stream
    /// family. Clouds then share randomness; meant for reproducing another
    /// cloud exactly (e.g. the level-0 cloud of the multilevel scheme).
    pub fn using_domain(mut self, domain: Domain) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> CouplingMode {
        self.mode
    }

    pub fn cloud(&self, i: usize) -> TimePointCloud {
        TimePointCloud {
            model: self.model.clone(),
            grid: self.grid.clone(),
            start: i,
            paths: self.counts[i],
            exact: self.mode == CouplingMode::Exact,
            streams: StreamFactory::new(
                self.seed,
                self.domain.unwrap_or(Domain::TimePoint { level: self.grid.level() as u32, index: i as u32 }),
            ),
        }
    }

    pub fn materialize(&self, i: usize) -> MaterializedTimePointCloud {
        MaterializedTimePointCloud::from_source(&self.cloud(i))
    }
}

/// Builds the per-time-point cloud family; one path count per `i < 2^k`.
pub fn simulate_per_timepoint_clouds(
    model: &Arc<ForwardModel>,
    grid: &TimeGrid,
    counts: &[usize],
    seed: u64,
    mode: Option<CouplingMode>,
) -> Result<TimePointClouds> {
    let mode = mode.unwrap_or_else(|| model.default_mode());
    model.check_mode(mode)?;
    if mode == CouplingMode::EulerCoupled {
        return Err(Error::UnsupportedMode("per-time-point clouds have no coarse grid".into()));
    }
    if counts.len() != grid.steps() {
        return Err(Error::Schedule(format!("expected {} per-time-point counts, got {}", grid.steps(), counts.len())));
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Schedule(format!("zero path count at time point {i}")));
    }
    Ok(TimePointClouds { model: model.clone(), grid: grid.clone(), counts: counts.to_vec(), seed, mode, domain: None })
}

#[derive(Debug, Clone)]
pub struct TimePointCloud {
    model: Arc<ForwardModel>,
    grid: TimeGrid,
    start: usize,
    paths: usize,
    exact: bool,
    streams: StreamFactory,
}

impl TailSource for TimePointCloud {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn start(&self) -> usize {
        self.start
    }

    fn dims(&self) -> (usize, usize) {
        (self.model.dim(), self.model.brownian_dim())
    }

    fn paths(&self) -> usize {
        self.paths
    }

    fn fill(&self, m: usize, out: &mut TailPath) {
        let model = &*self.model;
        let d = model.dim();
        model.ensure_scratch(&mut out.scratch);
        let mut rng = self.streams.path(m as u64);
        let n = self.grid.steps();
        let i0 = self.start;
        out.states[..d].copy_from_slice(model.x0());
        let t0 = self.grid.time(i0);
        if self.exact {
            if t0 > 0.0 {
                rng.fill_normal(&mut out.tmp);
                let sq = t0.sqrt();
                out.tmp.iter_mut().for_each(|v| *v *= sq);
                model.step(true, 0.0, t0, &mut out.states[..d], &out.tmp, &mut out.scratch);
            }
        } else {
            for j in 0..i0 {
                let dt = self.grid.increment(j);
                rng.fill_normal(&mut out.tmp);
                let sq = dt.sqrt();
                out.tmp.iter_mut().for_each(|v| *v *= sq);
                model.step(false, self.grid.time(j), dt, &mut out.states[..d], &out.tmp, &mut out.scratch);
            }
        }
        for j in i0..n {
            let dt = self.grid.increment(j);
            let sq = dt.sqrt();
            let w: &mut [f64] = if j == i0 { &mut out.dw } else { &mut out.tmp };
            rng.fill_normal(w);
            w.iter_mut().for_each(|v| *v *= sq);
            let r = j - i0;
            let (head, tail) = out.states.split_at_mut((r + 1) * d);
            tail[..d].copy_from_slice(&head[r * d..]);
            let w = if j == i0 { &out.dw } else { &out.tmp };
            model.step(self.exact, self.grid.time(j), dt, &mut tail[..d], w, &mut out.scratch);
        }
    }
}

/// A stored per-time-point cloud: states `[j - i][m][c]`, increments `[m][c]`.
#[derive(Debug, Clone)]
pub struct MaterializedTimePointCloud {
    grid: TimeGrid,
    start: usize,
    d: usize,
    q: usize,
    paths: usize,
    states: Vec<f64>,
    dw: Vec<f64>,
}

impl MaterializedTimePointCloud {
    fn from_source(src: &dyn TailSource) -> Self {
        let (d, q) = src.dims();
        let paths = src.paths();
        let len = src.grid().steps() - src.start() + 1;
        let mut states = vec![0.0; len * paths * d];
        let mut dw = vec![0.0; paths * q];
        let mut p = src.new_path();
        for m in 0..paths {
            src.fill(m, &mut p);
            for r in 0..len {
                states[(r * paths + m) * d..][..d].copy_from_slice(&p.states[r * d..(r + 1) * d]);
            }
            dw[m * q..(m + 1) * q].copy_from_slice(&p.dw);
        }
        Self { grid: src.grid().clone(), start: src.start(), d, q, paths, states, dw }
    }

    /// State at absolute index `j >= start` of path `m`.
    pub fn state(&self, j: usize, m: usize) -> &[f64] {
        &self.states[((j - self.start) * self.paths + m) * self.d..][..self.d]
    }

    pub fn increment(&self, m: usize) -> &[f64] {
        &self.dw[m * self.q..(m + 1) * self.q]
    }
}

impl TailSource for MaterializedTimePointCloud {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn start(&self) -> usize {
        self.start
    }

    fn dims(&self) -> (usize, usize) {
        (self.d, self.q)
    }

    fn paths(&self) -> usize {
        self.paths
    }

    fn fill(&self, m: usize, out: &mut TailPath) {
        let len = self.grid.steps() - self.start + 1;
        for r in 0..len {
            out.states[r * self.d..(r + 1) * self.d].copy_from_slice(self.state(self.start + r, m));
        }
        out.dw.copy_from_slice(self.increment(m));
    }
}

/// `n` independent draws of `X_i` (flattened, `d` per draw), exact when the
/// mode allows it and by Euler over the grid otherwise.
pub fn sample_marginal(
    model: &ForwardModel,
    grid: &TimeGrid,
    i: usize,
    n: usize,
    seed: u64,
    domain: Domain,
    mode: CouplingMode,
) -> Vec<f64> {
    let d = model.dim();
    let streams = StreamFactory::new(seed, domain);
    let exact = mode == CouplingMode::Exact && model.has_exact_transitions();
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(4096))
        .into_par_iter()
        .map(|c| {
            let mut scratch = model.scratch();
            let mut w = vec![0.0; model.brownian_dim()];
            let range = c * 4096..((c + 1) * 4096).min(n);
            let mut out = Vec::with_capacity(range.len() * d);
            for m in range {
                let mut rng = streams.path(m as u64);
                let mut x = model.x0().to_vec();
                let steps: Vec<(f64, f64)> = if exact {
                    vec![(0.0, grid.time(i))]
                } else {
                    (0..i).map(|j| (grid.time(j), grid.increment(j))).collect()
                };
                for (t, dt) in steps {
                    if dt == 0.0 {
                        continue;
                    }
                    rng.fill_normal(&mut w);
                    let sq = dt.sqrt();
                    w.iter_mut().for_each(|v| *v *= sq);
                    model.step(exact, t, dt, &mut x, &w, &mut scratch);
                }
                out.extend_from_slice(&x);
            }
            out
        })
        .collect();
    chunks.concat()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timegrid::GridFamily;

    fn bm() -> Arc<ForwardModel> {
        Arc::new(ForwardModel::brownian(vec![0.3]).unwrap())
    }

    #[test]
    fn brownian_path_is_running_sum() {
        let fam = GridFamily::uniform(1.0).unwrap();
        let cloud = simulate_cloud(&bm(), &fam.grid(1), Some(&fam.grid(0)), 1, 11, None).unwrap();
        let x2 = cloud.fine_state(2, 0)[0];
        let expect = 0.3 + cloud.increment(0, 0)[0] + cloud.increment(1, 0)[0];
        assert_eq!(x2, expect);
    }

    #[test]
    fn coarse_increments_are_sums_and_states_shared() {
        let fam = GridFamily::graded(1.0, 0.6).unwrap();
        let gbm = Arc::new(
            ForwardModel::geometric(vec![1.0, 1.0], vec![0.0, 0.1], vec![0.5, 0.5], &[vec![1.0, 0.0], vec![0.6, 0.8]])
                .unwrap(),
        );
        for mode in [CouplingMode::Exact, CouplingMode::EulerSubsample] {
            let cloud = simulate_cloud(&gbm, &fam.grid(3), Some(&fam.grid(2)), 20, 5, Some(mode)).unwrap();
            for m in 0..20 {
                for j in 0..4 {
                    let mut s = [0.0; 2];
                    for i in [2 * j, 2 * j + 1] {
                        for c in 0..2 {
                            s[c] += cloud.increment(i, m)[c];
                        }
                    }
                    assert_eq!(cloud.coarse_increment(j, m), &s);
                }
                for j in 0..=4 {
                    assert_eq!(cloud.coarse_state(j, m), cloud.fine_state(2 * j, m));
                }
            }
        }
    }

    #[test]
    fn level_zero_with_coarse_rejected() {
        let fam = GridFamily::uniform(1.0).unwrap();
        assert!(simulate_cloud(&bm(), &fam.grid(0), Some(&fam.grid(0)), 4, 1, None).is_err());
    }

    #[test]
    fn per_timepoint_counts_validated() {
        let fam = GridFamily::uniform(1.0).unwrap();
        let g = fam.grid(1);
        assert!(simulate_per_timepoint_clouds(&bm(), &g, &[1, 0], 1, None).is_err());
        assert!(simulate_per_timepoint_clouds(&bm(), &g, &[1], 1, None).is_err());
        let clouds = simulate_per_timepoint_clouds(&bm(), &g, &[1, 1], 1, None).unwrap();
        let a = clouds.materialize(0);
        let b = clouds.materialize(1);
        assert_eq!(a.paths(), 1);
        assert_eq!(b.paths(), 1);
        assert_ne!(a.state(1, 0)[0], b.state(1, 0)[0]);
    }
}
