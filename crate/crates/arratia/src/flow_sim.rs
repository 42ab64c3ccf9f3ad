//! Simulation of coalescing Brownian particles on the time interval `[0,1]`.
//!
//! A sample is produced by Euler steps on every live *cluster*: particles
//! move with independent increments until adjacent clusters meet, merge
//! permanently and continue with the stream of the lowest-index member.
//! Meetings are detected on a sign change of the gap at the step end and,
//! optionally, by the Brownian-bridge crossing probability, which removes
//! the `O(sqrt(dt))` under-detection of within-step meetings.
//!
//! Storage is ragged: each particle's trajectory is stored only while it
//! leads a cluster, after which it is read through the merge chain. This
//! keeps fine partitions cheap, since the number of live clusters decays
//! like `1/sqrt(t)`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::gauss_rng::{bridge_crossing_prob, GaussianStream};

/// Particle index bits inside a stream id; see [`particle_streams`].
pub const PARTICLE_STREAM_BITS: u32 = 20;

/// Uniform time grid on `[0,1]` with `n_steps` steps of length `1/n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeGrid {
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::invalid("n_steps must be at least 1"));
        }
        Ok(TimeGrid { n_steps })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n_steps as f64
    }

    pub fn time(&self, index: usize) -> f64 {
        index as f64 * self.dt()
    }
}

/// Ordered starting points of the particle system.
///
/// The paper-facing partitions of `[0,U]` additionally start at zero;
/// operations that rely on `u_0 = 0` validate it themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    points: Vec<f64>,
}

impl Partition {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("partition needs at least one point"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("partition points must be finite"));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("partition points must be strictly increasing"));
        }
        Ok(Partition { points })
    }

    /// Dyadic partition of `[0, u_max]` with `2^depth` intervals.
    pub fn dyadic(u_max: f64, depth: u32) -> Result<Self> {
        Partition::uniform(u_max, 1usize << depth)
    }

    /// Uniform partition of `[0, u_max]` with `n_intervals` intervals.
    pub fn uniform(u_max: f64, n_intervals: usize) -> Result<Self> {
        if !(u_max > 0.0) || n_intervals == 0 {
            return Err(Error::invalid(
                "uniform partition needs u_max > 0 and n_intervals >= 1",
            ));
        }
        let points = (0..=n_intervals)
            .map(|i| u_max * i as f64 / n_intervals as f64)
            .collect();
        Partition::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn n_particles(&self) -> usize {
        self.points.len()
    }

    pub fn u_max(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn starts_at_zero(&self) -> bool {
        self.points[0] == 0.0
    }

    /// Mesh `|pi| = max (u_{k+1} - u_k)`; zero for a single point.
    pub fn mesh(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Indices of `sub`'s points inside this partition (bitwise match).
    pub fn subset_indices(&self, sub: &Partition) -> Result<Vec<usize>> {
        let mut indices = Vec::with_capacity(sub.points.len());
        let mut from = 0;
        for &p in &sub.points {
            match self.points[from..].iter().position(|&q| q == p) {
                Some(offset) => {
                    indices.push(from + offset);
                    from += offset + 1;
                }
                None => {
                    return Err(Error::invalid(format!(
                        "point {p} of the sub-partition is not a partition point"
                    )))
                }
            }
        }
        Ok(indices)
    }

    /// New partition with `point` inserted; it must fall strictly inside an
    /// existing interval.
    pub fn refined_with(&self, point: f64) -> Result<Partition> {
        if !point.is_finite() || point <= self.points[0] || point >= *self.points.last().unwrap() {
            return Err(Error::invalid(format!(
                "refinement point {point} is not strictly inside the partition"
            )));
        }
        if self.points.contains(&point) {
            return Err(Error::invalid(format!(
                "refinement point {point} already present"
            )));
        }
        let mut points = self.points.clone();
        let at = points.iter().position(|&q| q > point).unwrap();
        points.insert(at, point);
        Partition::new(points)
    }
}

/// Read access to one realized bundle of coalescing trajectories, shared by
/// full samples and sub-partition views.
pub trait CoalescingPaths {
    fn n_particles(&self) -> usize;
    fn n_steps(&self) -> usize;
    fn dt(&self) -> f64;
    fn start_point(&self, k: usize) -> f64;
    /// Grid index of the meeting with the left neighbour, capped at `n_steps`.
    fn left_meeting_index(&self, k: usize) -> usize;
    fn position(&self, k: usize, index: usize) -> f64;
    /// Fill `out` with positions of particle `k` at indices `0..=upto`.
    fn fill_path(&self, k: usize, upto: usize, out: &mut Vec<f64>);
}

/// One realized trajectory bundle of the coalescing system.
#[derive(Debug, Clone)]
pub struct FlowSample {
    partition: Partition,
    n_steps: usize,
    dt: f64,
    /// `paths[k][i]` for `i <= merge_step[k]`; the last entry of a merged
    /// row equals the absorbing cluster's value at the merge index.
    paths: Vec<Vec<f64>>,
    /// First grid index at which particle `k`'s cluster coincides with its
    /// left neighbour's; `n_steps` if they never meet.
    merge_step: Vec<usize>,
    /// Leader whose path continues particle `k`'s after `merge_step[k]`;
    /// `k` itself when the particle never stops leading.
    merge_target: Vec<usize>,
}

/// Simulate the joint coalescing system started from `partition`.
///
/// `streams` supplies one Gaussian stream per particle; a merged cluster is
/// driven by the stream of its lowest-index member, and the bridge uniform
/// for a boundary pair is drawn from the right cluster's stream.
pub fn simulate_flow(
    partition: &Partition,
    grid: &TimeGrid,
    mut streams: Vec<GaussianStream>,
    bridge_correction: bool,
) -> Result<FlowSample> {
    let n = partition.n_particles();
    if streams.len() != n {
        return Err(Error::invalid(format!(
            "stream count {} does not match particle count {n}",
            streams.len()
        )));
    }
    let n_steps = grid.n_steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();

    const ALIVE: usize = usize::MAX;
    let mut pos: Vec<f64> = partition.points().to_vec();
    let mut proposed = vec![0.0f64; n];
    let mut merge_step = vec![ALIVE; n];
    let mut merge_target: Vec<usize> = (0..n).collect();
    let mut live: Vec<usize> = (0..n).collect();
    let mut paths: Vec<Vec<f64>> = pos.iter().map(|&p| vec![p]).collect();
    paths[0].reserve(n_steps);

    for step in 0..n_steps {
        for &l in &live {
            proposed[l] = pos[l] + sqrt_dt * streams[l].next_gaussian();
        }

        // Left-to-right merge sweep: `left_eff` is the value of the merged
        // cluster formed so far this step, so a cascade resolves in one pass.
        let mut merged_any = false;
        let mut left_rep = live[0];
        let mut left_eff = proposed[left_rep];
        paths[left_rep].push(left_eff);
        for w in 1..live.len() {
            let l = live[w];
            let gap_start = pos[l] - pos[live[w - 1]];
            let gap_end = proposed[l] - left_eff;
            let merge = if gap_end <= 0.0 {
                true
            } else if bridge_correction {
                let p = bridge_crossing_prob(gap_start.max(0.0), gap_end, dt, 2.0)?;
                streams[l].next_uniform() < p
            } else {
                false
            };
            if merge {
                merge_step[l] = step + 1;
                merge_target[l] = left_rep;
                paths[l].push(left_eff);
                merged_any = true;
            } else {
                paths[l].push(proposed[l]);
                left_rep = l;
                left_eff = proposed[l];
            }
        }

        if merged_any {
            live.retain(|&l| merge_step[l] == ALIVE);
        }
        for &l in &live {
            pos[l] = *paths[l].last().unwrap();
        }
    }

    for &l in &live {
        merge_step[l] = n_steps;
    }
    Ok(FlowSample {
        partition: partition.clone(),
        n_steps,
        dt,
        paths,
        merge_step,
        merge_target,
    })
}

impl FlowSample {
    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    /// Lowest-index member of particle `k`'s cluster at grid index `i`.
    pub fn cluster_label(&self, k: usize, i: usize) -> usize {
        let mut r = k;
        while self.merge_target[r] != r && self.merge_step[r] <= i {
            r = self.merge_target[r];
        }
        r
    }

    pub fn same_cluster(&self, j: usize, k: usize, i: usize) -> bool {
        self.cluster_label(j, i) == self.cluster_label(k, i)
    }

    /// First grid index at which particles `j` and `k` share a cluster,
    /// `n_steps` if they never do within the horizon.
    ///
    /// Clusters are index intervals, so the pair coincides once every
    /// adjacent pair between them has merged.
    pub fn pair_merge_index(&self, j: usize, k: usize) -> usize {
        let (lo, hi) = if j <= k { (j, k) } else { (k, j) };
        (lo + 1..=hi).map(|m| self.merge_step[m]).max().unwrap_or(0)
    }

    /// Meeting times `tau(u_k) = left_meeting_index(k) * dt`, `k = 1..n`.
    pub fn left_meeting_times(&self) -> Vec<f64> {
        (1..self.n_particles())
            .map(|k| self.merge_step[k] as f64 * self.dt)
            .collect()
    }

    /// First grid index at which particle `k`'s cluster contains any
    /// particle of `set`; `n_steps` when it never does.
    pub fn first_meeting_index_with_set(&self, k: usize, set: &[usize]) -> Result<usize> {
        if k >= self.n_particles() {
            return Err(Error::invalid(format!("particle index {k} out of range")));
        }
        let mut earliest = self.n_steps;
        for &j in set {
            if j >= self.n_particles() {
                return Err(Error::invalid(format!(
                    "set particle index {j} out of range"
                )));
            }
            if j != k {
                earliest = earliest.min(self.pair_merge_index(j, k));
            }
        }
        Ok(earliest)
    }

    /// Grid index of `tau_k`, the first meeting with any of the particles
    /// `0..k`; by convention `tau_0` is the horizon.
    pub fn first_meeting_index_with_any_predecessor(&self, k: usize) -> Result<usize> {
        if k == 0 {
            return Ok(self.n_steps);
        }
        let set: Vec<usize> = (0..k).collect();
        self.first_meeting_index_with_set(k, &set)
    }

    /// `tau_k` as a time in `[0,1]`.
    pub fn first_meeting_with_any_predecessor(&self, k: usize) -> Result<f64> {
        Ok(self.first_meeting_index_with_any_predecessor(k)? as f64 * self.dt)
    }

    /// View of the sample restricted to the particles of `sub`, with
    /// meeting times relative to `sub`'s neighbour structure.
    pub fn restrict_to_subpartition(&self, sub: &Partition) -> Result<FlowView<'_>> {
        let indices = self.partition.subset_indices(sub)?;
        Ok(FlowView {
            sample: self,
            sub: sub.clone(),
            indices,
        })
    }

    /// Dump the dense trajectory/label matrices as CSV with header
    /// `time,particle_0,...,particle_n,cluster_0,...,cluster_n`.
    pub fn write_trajectory_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let n = self.n_particles();
        write!(out, "time")?;
        for k in 0..n {
            write!(out, ",particle_{k}")?;
        }
        for k in 0..n {
            write!(out, ",cluster_{k}")?;
        }
        writeln!(out)?;
        for i in 0..=self.n_steps {
            write!(out, "{}", i as f64 * self.dt)?;
            for k in 0..n {
                write!(out, ",{}", self.position(k, i))?;
            }
            for k in 0..n {
                write!(out, ",{}", self.cluster_label(k, i))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

impl CoalescingPaths for FlowSample {
    fn n_particles(&self) -> usize {
        self.partition.n_particles()
    }

    fn n_steps(&self) -> usize {
        self.n_steps
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn start_point(&self, k: usize) -> f64 {
        self.partition.points()[k]
    }

    fn left_meeting_index(&self, k: usize) -> usize {
        self.merge_step[k]
    }

    fn position(&self, k: usize, index: usize) -> f64 {
        let r = self.cluster_label(k, index);
        self.paths[r][index]
    }

    fn fill_path(&self, k: usize, upto: usize, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(upto + 1);
        let mut r = k;
        let mut from = 0;
        loop {
            let row_end = self.paths[r].len() - 1;
            let end = row_end.min(upto);
            out.extend_from_slice(&self.paths[r][from..=end]);
            if end == upto {
                return;
            }
            from = end + 1;
            r = self.merge_target[r];
        }
    }
}

/// Restriction of a [`FlowSample`] to a sub-partition.
#[derive(Debug, Clone)]
pub struct FlowView<'a> {
    sample: &'a FlowSample,
    sub: Partition,
    indices: Vec<usize>,
}

impl FlowView<'_> {
    pub fn partition(&self) -> &Partition {
        &self.sub
    }

    /// Spatial index of view particle `j` in the underlying sample.
    pub fn sample_index(&self, j: usize) -> usize {
        self.indices[j]
    }

    pub fn left_meeting_times(&self) -> Vec<f64> {
        (1..self.indices.len())
            .map(|j| self.left_meeting_index(j) as f64 * self.sample.dt)
            .collect()
    }
}

impl CoalescingPaths for FlowView<'_> {
    fn n_particles(&self) -> usize {
        self.indices.len()
    }

    fn n_steps(&self) -> usize {
        self.sample.n_steps
    }

    fn dt(&self) -> f64 {
        self.sample.dt
    }

    fn start_point(&self, k: usize) -> f64 {
        self.sub.points()[k]
    }

    fn left_meeting_index(&self, k: usize) -> usize {
        self.sample
            .pair_merge_index(self.indices[k - 1], self.indices[k])
    }

    fn position(&self, k: usize, index: usize) -> f64 {
        self.sample.position(self.indices[k], index)
    }

    fn fill_path(&self, k: usize, upto: usize, out: &mut Vec<f64>) {
        self.sample.fill_path(self.indices[k], upto, out);
    }
}

/// One stream per particle for `replica`, with ids `(replica << 20) | k`.
pub fn particle_streams(
    seed: u64,
    replica: usize,
    n_particles: usize,
) -> Result<Vec<GaussianStream>> {
    if n_particles >= (1usize << PARTICLE_STREAM_BITS) {
        return Err(Error::invalid(format!(
            "particle count {n_particles} exceeds the stream id layout"
        )));
    }
    Ok((0..n_particles)
        .map(|k| GaussianStream::new(seed, ((replica as u64) << PARTICLE_STREAM_BITS) | k as u64))
        .collect())
}

/// Meeting step index of two coalescing particles started `gap` apart,
/// capped at `n_steps`. Identical dynamics (and identical draws) to
/// [`simulate_flow`] on a two-point partition, with early exit.
pub fn simulate_pair_meeting_index(
    gap: f64,
    grid: &TimeGrid,
    left: &mut GaussianStream,
    right: &mut GaussianStream,
    bridge_correction: bool,
) -> Result<usize> {
    if !(gap > 0.0) {
        return Err(Error::invalid(format!("pair gap must be positive, got {gap}")));
    }
    let n_steps = grid.n_steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut x_left = 0.0f64;
    let mut x_right = gap;
    for step in 0..n_steps {
        let gap_start = x_right - x_left;
        let new_left = x_left + sqrt_dt * left.next_gaussian();
        let new_right = x_right + sqrt_dt * right.next_gaussian();
        let gap_end = new_right - new_left;
        if gap_end <= 0.0 {
            return Ok(step + 1);
        }
        if bridge_correction {
            let p = bridge_crossing_prob(gap_start, gap_end, dt, 2.0)?;
            if right.next_uniform() < p {
                return Ok(step + 1);
            }
        }
        x_left = new_left;
        x_right = new_right;
    }
    Ok(n_steps)
}
