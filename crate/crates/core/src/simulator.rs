//! Coalescent point processes and forward splitting trees with marked
//! Poissonian mutations, and the spectrum statistics read off them.
//!
//! A marked tree carries mutations with i.i.d. marks uniform on
//! `[0, theta_max]`; keeping the marks `<= theta` gives the mutation process
//! at rate `theta`, so one realisation serves every rate up to `theta_max`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lifetimes::LifetimeModel;
use crate::scalefn::{ModelParams, ScaleTable};

/// Genealogy of the population alive at time `t`: branch `i` hangs from the
/// tree at depth `depths[i]`; branch 0 is the ancestral lineage (`depths[0] = t`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoalescentTree {
    pub t: f64,
    pub depths: Vec<f64>,
}

impl CoalescentTree {
    /// Builds a tree from the depths `H_1, ..., H_{N-1}`.
    pub fn new(t: f64, depths: &[f64]) -> Result<Self> {
        if depths.iter().any(|&h| !(h > 0.0 && h <= t)) {
            return Err(Error::invalid("coalescent depths must lie in (0, t]"));
        }
        let mut all = Vec::with_capacity(depths.len() + 1);
        all.push(t);
        all.extend_from_slice(depths);
        Ok(Self { t, depths: all })
    }

    /// Population size `N_t`.
    pub fn n(&self) -> usize {
        self.depths.len()
    }

    /// Length of branch `i` available to mutations.
    pub fn span(&self, i: usize) -> f64 {
        self.depths[i]
    }

    pub fn total_length(&self) -> f64 {
        self.depths.iter().sum()
    }
}

/// Samples the coalescent point process at time `t` from the scale function:
/// depths are i.i.d. with `P(H > s) = 1/W(s)`, stopped at the first one
/// exceeding `t`.
pub fn sample_cpp<R: Rng + ?Sized>(w: &ScaleTable, t: f64, rng: &mut R) -> Result<CoalescentTree> {
    if !(t > 0.0 && t <= w.t_max()) {
        return Err(Error::invalid(format!(
            "observation time {t} outside (0, {}]",
            w.t_max()
        )));
    }
    let w_t = w.eval(t);
    let mut depths = vec![t];
    loop {
        // W(H) = 1/U with U uniform on (0, 1]
        let u = 1.0 - rng.random::<f64>();
        let y = 1.0 / u;
        if y > w_t {
            break;
        }
        match w.inverse(y)? {
            Some(h) => depths.push(h.clamp(f64::MIN_POSITIVE, t)),
            None => break,
        }
    }
    Ok(CoalescentTree { t, depths })
}

/// One mutation: on `branch`, at `depth` below the observation time, with a
/// coupling mark in `[0, theta_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MutationRecord {
    pub branch: usize,
    pub depth: f64,
    pub mark: f64,
}

/// Poisson mutations at rate `theta_max` along every branch, with uniform
/// marks.
pub fn scatter_mutations<R: Rng + ?Sized>(
    tree: &CoalescentTree,
    theta_max: f64,
    rng: &mut R,
) -> Vec<MutationRecord> {
    let mut out = Vec::new();
    if theta_max <= 0.0 {
        return out;
    }
    for (branch, &span) in tree.depths.iter().enumerate() {
        let count = poisson(theta_max * span, rng);
        for _ in 0..count {
            out.push(MutationRecord {
                branch,
                depth: span * (1.0 - rng.random::<f64>()),
                mark: theta_max * rng.random::<f64>(),
            });
        }
    }
    out
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .expect("positive finite mean")
        .sample(rng) as u64
}

/// Allelic partition of a population at one mutation rate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpectrumResult {
    pub theta_eval: OrderedRate,
    /// `counts[k - 1] = A(k)`, the number of types carried by exactly `k`
    /// individuals (the ancestral type excluded).
    pub counts: Vec<u64>,
    /// Individuals still carrying the ancestral type.
    pub clonal: u64,
    pub n: u64,
}

/// A rate stored by bit pattern so spectra can derive `Eq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OrderedRate(u64);

impl OrderedRate {
    pub fn new(x: f64) -> Self {
        Self(x.to_bits())
    }

    pub fn get(self) -> f64 {
        f64::from_bits(self.0)
    }
}

impl SpectrumResult {
    fn from_family_sizes(
        theta_eval: f64,
        sizes: impl IntoIterator<Item = u64>,
        clonal: u64,
        n: u64,
    ) -> Self {
        let mut counts: Vec<u64> = Vec::new();
        for s in sizes {
            if s == 0 {
                continue;
            }
            let k = s as usize;
            if counts.len() < k {
                counts.resize(k, 0);
            }
            counts[k - 1] += 1;
        }
        Self {
            theta_eval: OrderedRate::new(theta_eval),
            counts,
            clonal,
            n,
        }
    }

    /// `A(k)` for `k >= 1`.
    pub fn a(&self, k: usize) -> u64 {
        if k == 0 {
            return 0;
        }
        self.counts.get(k - 1).copied().unwrap_or(0)
    }

    pub fn theta(&self) -> f64 {
        self.theta_eval.get()
    }

    /// `N = Z_0 + sum_k k A(k)`.
    pub fn partition_holds(&self) -> bool {
        let total: u64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (i as u64 + 1) * c)
            .sum();
        total + self.clonal == self.n
    }
}

/// Range-maximum table over the depths for "next deeper branch" queries.
struct SparseMax {
    levels: Vec<Vec<f64>>,
}

impl SparseMax {
    fn new(values: &[f64]) -> Self {
        let mut levels = vec![values.to_vec()];
        let mut width = 1;
        while 2 * width <= values.len() {
            let prev = levels.last().expect("at least one level");
            let next: Vec<f64> = (0..=values.len() - 2 * width)
                .map(|i| prev[i].max(prev[i + width]))
                .collect();
            levels.push(next);
            width *= 2;
        }
        Self { levels }
    }

    /// Smallest `j >= from` with `values[j] > a`, or `len` when none.
    fn first_above(&self, from: usize, a: f64) -> usize {
        let n = self.levels[0].len();
        let mut pos = from;
        for (lvl, table) in self.levels.iter().enumerate().rev() {
            let width = 1usize << lvl;
            if pos + width <= n && table[pos] <= a {
                pos += width;
            }
        }
        pos
    }
}

fn find_next(next: &mut [usize], mut x: usize) -> usize {
    let mut root = x;
    while next[root] != root {
        root = next[root];
    }
    while next[x] != root {
        let up = next[x];
        next[x] = root;
        x = up;
    }
    root
}

/// Family sizes at rate `theta_eval` by a depth-ordered sweep.
///
/// Mutation `(i, a)` is inherited by individual `m >= i` iff no branch in
/// `(i, m]` is deeper than `a`; each individual takes the most recent
/// (shallowest) mutation it inherits. Processing mutations from shallow to
/// deep, each one claims the still-unassigned individuals of its interval.
pub fn spectrum_at_rate(
    tree: &CoalescentTree,
    mutations: &[MutationRecord],
    theta_eval: f64,
) -> SpectrumResult {
    let n = tree.n();
    let mut kept: Vec<&MutationRecord> =
        mutations.iter().filter(|m| m.mark <= theta_eval).collect();
    if kept.is_empty() {
        return SpectrumResult::from_family_sizes(theta_eval, [], n as u64, n as u64);
    }
    kept.sort_by(|x, y| {
        x.depth
            .partial_cmp(&y.depth)
            .unwrap_or(Ordering::Equal)
            .then(x.branch.cmp(&y.branch))
    });
    let table = SparseMax::new(&tree.depths);
    // next[x]: first unassigned individual at or after x (n = sentinel)
    let mut next: Vec<usize> = (0..=n).collect();
    let mut sizes = Vec::with_capacity(kept.len());
    let mut assigned = 0u64;
    for m in kept {
        let end = table.first_above(m.branch + 1, m.depth);
        let mut size = 0u64;
        let mut x = find_next(&mut next, m.branch);
        while x < end {
            size += 1;
            next[x] = x + 1;
            x = find_next(&mut next, x + 1);
        }
        assigned += size;
        sizes.push(size);
    }
    SpectrumResult::from_family_sizes(theta_eval, sizes, n as u64 - assigned, n as u64)
}

/// Type of every individual by walking up its lineage: the ancestor at depth
/// `a` of individual `m` is branch `max{j <= m : H_j > a}`; the first
/// (shallowest) mutation met fixes the type. `None` is the ancestral type.
///
/// Quadratic cost; meant as an independent reference for small trees.
pub fn lineage_types(
    tree: &CoalescentTree,
    mutations: &[MutationRecord],
    theta_eval: f64,
) -> Vec<Option<usize>> {
    let ancestor =
        |m: usize, a: f64| -> usize { (0..=m).rev().find(|&j| tree.depths[j] > a).unwrap_or(0) };
    (0..tree.n())
        .map(|m| {
            let mut best: Option<usize> = None;
            for (idx, mu) in mutations.iter().enumerate() {
                if mu.mark > theta_eval || mu.branch > m || ancestor(m, mu.depth) != mu.branch {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => {
                        let cur = &mutations[b];
                        (mu.depth, mu.branch) < (cur.depth, cur.branch)
                    }
                };
                if better {
                    best = Some(idx);
                }
            }
            best
        })
        .collect()
}

/// Spectrum from [`lineage_types`].
pub fn lineage_oracle(
    tree: &CoalescentTree,
    mutations: &[MutationRecord],
    theta_eval: f64,
) -> SpectrumResult {
    let types = lineage_types(tree, mutations, theta_eval);
    let clonal = types.iter().filter(|t| t.is_none()).count() as u64;
    let mut sizes = vec![0u64; mutations.len()];
    for t in types.iter().flatten() {
        sizes[*t] += 1;
    }
    SpectrumResult::from_family_sizes(theta_eval, sizes, clonal, tree.n() as u64)
}

/// Probability that two distinct individuals drawn uniformly share a type:
/// `[Z_0 (Z_0 - 1) + sum_k k (k - 1) A(k)] / (N (N - 1))`. `None` when `N < 2`.
pub fn ehh_exact(s: &SpectrumResult) -> Option<f64> {
    if s.n < 2 {
        return None;
    }
    let pairs = |k: u64| (k as f64) * (k as f64 - 1.0);
    let same: f64 = pairs(s.clonal)
        + s.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * pairs(i as u64 + 1))
            .sum::<f64>();
    Some(same / pairs(s.n))
}

/// Settings of a forward simulation.
#[derive(Debug, Clone, Serialize)]
pub struct ForwardConfig {
    /// Time at which the final population size is recorded.
    pub horizon: f64,
    /// Times (at most `horizon`) at which spectra are recorded.
    pub checkpoints: Vec<f64>,
    /// Mutation rates at which spectra are read; mutations are simulated at
    /// the largest one.
    pub theta_evals: Vec<f64>,
    /// Runs reaching this many individuals stop and are flagged truncated.
    pub population_cap: usize,
    /// Restart until the population is alive at this time.
    pub condition_on_survival_at: Option<f64>,
    pub max_attempts: usize,
}

impl ForwardConfig {
    pub fn counts_only(horizon: f64) -> Self {
        Self {
            horizon,
            checkpoints: Vec::new(),
            theta_evals: Vec::new(),
            population_cap: 1_000_000,
            condition_on_survival_at: None,
            max_attempts: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Checkpoint {
    pub time: f64,
    pub n: u64,
    /// One spectrum per entry of `theta_evals`.
    pub spectra: Vec<SpectrumResult>,
}

/// Outcome of one forward run.
#[derive(Debug, Clone, Serialize)]
pub struct ForwardRun {
    pub checkpoints: Vec<Checkpoint>,
    pub horizon: f64,
    pub terminal_n: u64,
    /// The population hit the cap; `terminal_n` is then a lower bound.
    pub truncated: bool,
    /// Number of runs started, including rejected ones.
    pub attempts: usize,
}

impl ForwardRun {
    pub fn extinct(&self) -> bool {
        self.terminal_n == 0 && !self.truncated
    }
}

/// `psi'(alpha) e^{-alpha T} N_T`, the finite-horizon proxy of the limit `E`.
pub fn estimate_e(run: &ForwardRun, alpha: f64, psi_prime_alpha: f64) -> f64 {
    psi_prime_alpha * (-alpha * run.horizon).exp() * run.terminal_n as f64
}

/// Simulates the splitting tree forward from one newborn ancestor.
///
/// Births and mutations of the whole population form one Poisson stream of
/// rate `N (b + theta_max)`, redrawn whenever `N` changes; deaths are taken
/// from a queue of scheduled death times. After the last checkpoint only the
/// population size is followed, by exact count dynamics when the lifetime is
/// memoryless.
pub fn simulate_forward<R: Rng + ?Sized>(
    params: &ModelParams,
    config: &ForwardConfig,
    rng: &mut R,
) -> Result<ForwardRun> {
    let mut checkpoints = config.checkpoints.clone();
    checkpoints.sort_by(f64::total_cmp);
    if checkpoints
        .iter()
        .any(|&c| !(c >= 0.0 && c <= config.horizon))
    {
        return Err(Error::invalid("checkpoints must lie in [0, horizon]"));
    }
    if config
        .theta_evals
        .iter()
        .any(|&x| !(x >= 0.0 && x.is_finite()))
    {
        return Err(Error::invalid("mutation rates must be non-negative"));
    }
    if let Some(tc) = config.condition_on_survival_at {
        if tc != config.horizon && !checkpoints.contains(&tc) {
            return Err(Error::invalid(
                "the conditioning time must be a checkpoint or the horizon",
            ));
        }
    }
    let mut attempts = 0;
    loop {
        attempts += 1;
        let mut run = forward_once(params, config, &checkpoints, rng);
        run.attempts = attempts;
        let accepted = match config.condition_on_survival_at {
            None => true,
            Some(tc) => run.truncated || alive_at(&run, tc),
        };
        if accepted {
            return Ok(run);
        }
        if attempts >= config.max_attempts {
            return Err(Error::Numerical(format!(
                "no surviving run after {attempts} attempts"
            )));
        }
    }
}

fn alive_at(run: &ForwardRun, t: f64) -> bool {
    match run.checkpoints.iter().find(|c| c.time == t) {
        Some(c) => c.n > 0,
        None => run.terminal_n > 0,
    }
}

struct Population {
    /// Ids of the living individuals.
    alive: Vec<usize>,
    /// Position in `alive` of each id (`usize::MAX` once dead).
    position: Vec<usize>,
    /// Types, `n_theta` entries per id (0 = ancestral).
    types: Vec<u32>,
    n_theta: usize,
    deaths: BinaryHeap<Reverse<(OrdTime, usize)>>,
    next_type: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdTime(f64);

impl Eq for OrdTime {}

impl PartialOrd for OrdTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Population {
    fn new(n_theta: usize) -> Self {
        Self {
            alive: Vec::new(),
            position: Vec::new(),
            types: Vec::new(),
            n_theta,
            deaths: BinaryHeap::new(),
            next_type: 1,
        }
    }

    fn add<R: Rng + ?Sized>(
        &mut self,
        now: f64,
        parent: Option<usize>,
        lifetime: &LifetimeModel,
        rng: &mut R,
    ) {
        let id = self.position.len();
        self.position.push(self.alive.len());
        self.alive.push(id);
        match parent {
            Some(p) => {
                for j in 0..self.n_theta {
                    let t = self.types[p * self.n_theta + j];
                    self.types.push(t);
                }
            }
            None => self.types.extend(std::iter::repeat_n(0, self.n_theta)),
        }
        let v = lifetime.sample(rng);
        if v.is_finite() {
            self.deaths.push(Reverse((OrdTime(now + v), id)));
        }
    }

    fn remove(&mut self, id: usize) {
        let pos = self.position[id];
        let last = *self.alive.last().expect("non-empty population");
        self.alive.swap_remove(pos);
        if last != id {
            self.position[last] = pos;
        }
        self.position[id] = usize::MAX;
    }

    fn next_death(&self) -> f64 {
        self.deaths
            .peek()
            .map_or(f64::INFINITY, |Reverse((t, _))| t.0)
    }

    fn spectra(&self, theta_evals: &[f64]) -> Vec<SpectrumResult> {
        let n = self.alive.len() as u64;
        (0..self.n_theta)
            .map(|j| {
                let mut ts: Vec<u32> = self
                    .alive
                    .iter()
                    .map(|&id| self.types[id * self.n_theta + j])
                    .collect();
                ts.sort_unstable();
                let mut sizes = Vec::new();
                let mut clonal = 0u64;
                let mut i = 0;
                while i < ts.len() {
                    let mut e = i;
                    while e < ts.len() && ts[e] == ts[i] {
                        e += 1;
                    }
                    if ts[i] == 0 {
                        clonal = (e - i) as u64;
                    } else {
                        sizes.push((e - i) as u64);
                    }
                    i = e;
                }
                SpectrumResult::from_family_sizes(theta_evals[j], sizes, clonal, n)
            })
            .collect()
    }
}

fn forward_once<R: Rng + ?Sized>(
    params: &ModelParams,
    config: &ForwardConfig,
    checkpoints: &[f64],
    rng: &mut R,
) -> ForwardRun {
    let b = params.b;
    let theta_max = config.theta_evals.iter().copied().fold(0.0, f64::max);
    let n_theta = config.theta_evals.len();
    let last_checkpoint = checkpoints.last().copied();
    let mut pop = Population::new(n_theta);
    pop.add(0.0, None, &params.lifetime, rng);
    let mut now = 0.0;
    let mut recorded = Vec::with_capacity(checkpoints.len());
    let mut next_cp = 0;
    let mut truncated = false;
    // detailed phase: until the last checkpoint (or the horizon when the
    // lifetime has memory and must be tracked per individual)
    let memoryless = params.lifetime.markov_death_rate().is_some();
    let detailed_end = match last_checkpoint {
        Some(c) if memoryless => c,
        _ if memoryless => 0.0,
        _ => config.horizon,
    };
    loop {
        let n = pop.alive.len();
        if n == 0 {
            break;
        }
        if n >= config.population_cap {
            truncated = true;
            break;
        }
        let mutating = next_cp < checkpoints.len();
        let rate = n as f64 * (b + if mutating { theta_max } else { 0.0 });
        let wait: f64 = Exp::new(rate).expect("positive rate").sample(rng);
        let t_event = now + wait;
        let t_death = pop.next_death();
        let t_next = t_event.min(t_death);
        // record checkpoints passed before the next event
        while next_cp < checkpoints.len() && checkpoints[next_cp] < t_next {
            recorded.push(Checkpoint {
                time: checkpoints[next_cp],
                n: n as u64,
                spectra: pop.spectra(&config.theta_evals),
            });
            next_cp += 1;
        }
        if t_next >= detailed_end && next_cp == checkpoints.len() {
            break;
        }
        if t_death <= t_event {
            now = t_death;
            let Reverse((_, id)) = pop.deaths.pop().expect("scheduled death");
            pop.remove(id);
            continue;
        }
        now = t_event;
        let who = pop.alive[rng.random_range(0..n)];
        if !mutating || rng.random::<f64>() * (b + theta_max) < b {
            pop.add(now, Some(who), &params.lifetime, rng);
        } else {
            let mark = theta_max * rng.random::<f64>();
            let new_type = pop.next_type;
            pop.next_type += 1;
            for (j, &th) in config.theta_evals.iter().enumerate() {
                if mark <= th {
                    pop.types[who * n_theta + j] = new_type;
                }
            }
        }
    }
    // checkpoints after extinction or truncation
    while next_cp < checkpoints.len() {
        recorded.push(Checkpoint {
            time: checkpoints[next_cp],
            n: pop.alive.len() as u64,
            spectra: pop.spectra(&config.theta_evals),
        });
        next_cp += 1;
    }
    let mut terminal_n = pop.alive.len() as u64;
    if !truncated && terminal_n > 0 && memoryless {
        let d = params.lifetime.markov_death_rate().expect("memoryless");
        let start = detailed_end.max(now.min(detailed_end));
        let (n_end, capped) = continue_counts(
            b,
            d,
            terminal_n,
            config.horizon - start,
            config.population_cap,
            rng,
        );
        terminal_n = n_end;
        truncated = capped;
    }
    ForwardRun {
        checkpoints: recorded,
        horizon: config.horizon,
        terminal_n,
        truncated,
        attempts: 1,
    }
}

/// Population size after `duration` for a linear birth-death process started
/// from `n`.
fn continue_counts<R: Rng + ?Sized>(
    b: f64,
    d: f64,
    n: u64,
    duration: f64,
    cap: usize,
    rng: &mut R,
) -> (u64, bool) {
    if duration <= 0.0 || n == 0 {
        return (n, false);
    }
    if d == 0.0 {
        // Yule: N_{t+s} - n is negative binomial(n, e^{-b s}), a Gamma-mixed Poisson
        let scale = (b * duration).exp_m1();
        let lambda = Gamma::new(n as f64, scale)
            .expect("valid gamma")
            .sample(rng);
        return (n + poisson(lambda, rng), false);
    }
    let mut count = n;
    let mut elapsed = 0.0;
    loop {
        let rate = count as f64 * (b + d);
        elapsed += Exp::new(rate).expect("positive rate").sample(rng);
        if elapsed > duration {
            return (count, false);
        }
        if rng.random::<f64>() * (b + d) < b {
            count += 1;
            if count as usize >= cap {
                return (count, true);
            }
        } else {
            count -= 1;
            if count == 0 {
                return (0, false);
            }
        }
    }
}
