//! The query model: experimental settings, synthetic dataset generation,
//! and grouping for tomography-style learners.
//!
//! A query x = (U, t, M) prepares U|0…0⟩, evolves for time t under the true
//! Hamiltonian, rotates by M, and reads out one n-bit string in the
//! computational basis. Datasets are lists of (query, outcome) pairs, one
//! outcome per entry.

use std::collections::HashMap;

use crate::hamiltonian::HamiltonianModel;
use crate::noise::{
    depolarization_weight, depolarize_probs, readout_channel, DepolarizationModel, ReadoutNoise,
};
use crate::rng::{sample_outcome, unit_uniform};
use crate::state::StateVector;
use crate::unitary::{measurement_probs, Gate, GateKey, LocalUnitary, MEAS_MENU, PREP_MENU};
use crate::CoreError;

/// One experimental setting: preparation, evolution time, measurement
/// rotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub prep: LocalUnitary,
    pub t: f64,
    pub meas: LocalUnitary,
}

/// One observed shot: a query plus its n-bit outcome, stored as the basis
/// index of the observed bit-string (qubit 0 = most significant bit).
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub query: Query,
    pub outcome: usize,
}

impl DatasetEntry {
    pub fn new(query: Query, outcome: usize) -> Result<Self, CoreError> {
        let n = query.prep.num_qubits();
        if outcome >= (1usize << n) {
            return Err(CoreError::BasisIndexOutOfRange { index: outcome, n });
        }
        Ok(Self { query, outcome })
    }

    /// The outcome rendered as a bit-string, leftmost bit = qubit 0.
    pub fn outcome_bits(&self) -> String {
        let n = self.query.prep.num_qubits();
        (0..n)
            .map(|q| {
                if self.outcome & (1 << (n - 1 - q)) != 0 {
                    '1'
                } else {
                    '0'
                }
            })
            .collect()
    }
}

/// A grid of experimental settings: (preparation, measurement) pairs, a
/// shared list of evolution times, and a shot count per (setting, time).
///
/// Queries are ordered setting-major, then time; the flat query index
/// `setting · #times + time` keys the RNG stream, so generation is
/// reproducible regardless of iteration order.
#[derive(Clone, Debug)]
pub struct QueryGrid {
    settings: Vec<(LocalUnitary, LocalUnitary)>,
    times: Vec<f64>,
    shots: usize,
}

impl QueryGrid {
    pub fn new(
        settings: Vec<(LocalUnitary, LocalUnitary)>,
        times: Vec<f64>,
        shots: usize,
    ) -> Result<Self, CoreError> {
        if settings.is_empty() || times.is_empty() {
            return Err(CoreError::EmptyGrid);
        }
        if shots < 1 {
            return Err(CoreError::NoShots);
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(CoreError::NonFinite { context: "grid times" });
        }
        let n = settings[0].0.num_qubits();
        for (u, m) in &settings {
            if u.num_qubits() != n || m.num_qubits() != n {
                return Err(CoreError::DimensionMismatch {
                    expected: n,
                    got: u.num_qubits().max(m.num_qubits()),
                });
            }
        }
        Ok(Self {
            settings,
            times,
            shots,
        })
    }

    /// Default grid: setting k prepares qubit i in PREP_MENU[(k+i) mod 4]
    /// and measures it in MEAS_MENU[(k+i) mod 3], cycling round-robin.
    pub fn round_robin(
        n: usize,
        n_settings: usize,
        times: Vec<f64>,
        shots: usize,
    ) -> Result<Self, CoreError> {
        let settings = (0..n_settings)
            .map(|k| {
                let prep = LocalUnitary::new(
                    (0..n).map(|i| PREP_MENU[(k + i) % PREP_MENU.len()]).collect(),
                )?;
                let meas = LocalUnitary::new(
                    (0..n).map(|i| MEAS_MENU[(k + i) % MEAS_MENU.len()]).collect(),
                )?;
                Ok((prep, meas))
            })
            .collect::<Result<Vec<_>, CoreError>>()?;
        Self::new(settings, times, shots)
    }

    /// Cartesian product of explicit preparation and measurement patterns.
    pub fn product(
        preps: Vec<LocalUnitary>,
        meas: Vec<LocalUnitary>,
        times: Vec<f64>,
        shots: usize,
    ) -> Result<Self, CoreError> {
        let mut settings = Vec::with_capacity(preps.len() * meas.len());
        for u in &preps {
            for m in &meas {
                settings.push((u.clone(), m.clone()));
            }
        }
        Self::new(settings, times, shots)
    }

    /// Seeded-random option: every qubit of every pattern draws its gate
    /// independently from the menus.
    pub fn seeded_random(
        n: usize,
        n_settings: usize,
        times: Vec<f64>,
        shots: usize,
        seed: u64,
    ) -> Result<Self, CoreError> {
        let settings = (0..n_settings)
            .map(|k| {
                let prep = LocalUnitary::new(
                    (0..n)
                        .map(|i| {
                            let u = unit_uniform(seed, k as u64, i as u64);
                            PREP_MENU[(u * PREP_MENU.len() as f64) as usize % PREP_MENU.len()]
                        })
                        .collect(),
                )?;
                let meas = LocalUnitary::new(
                    (0..n)
                        .map(|i| {
                            let u = unit_uniform(seed ^ 0x5ca1_ab1e, k as u64, i as u64);
                            MEAS_MENU[(u * MEAS_MENU.len() as f64) as usize % MEAS_MENU.len()]
                        })
                        .collect(),
                )?;
                Ok((prep, meas))
            })
            .collect::<Result<Vec<_>, CoreError>>()?;
        Self::new(settings, times, shots)
    }

    /// The equally spaced time grid {k·Δt : k = 1..⌊T/Δt⌋}.
    pub fn uniform_times(dt: f64, t_max: f64) -> Vec<f64> {
        let count = (t_max / dt + 1e-9).floor() as usize;
        (1..=count).map(|k| k as f64 * dt).collect()
    }

    pub fn num_qubits(&self) -> usize {
        self.settings[0].0.num_qubits()
    }

    pub fn settings(&self) -> &[(LocalUnitary, LocalUnitary)] {
        &self.settings
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn shots(&self) -> usize {
        self.shots
    }

    pub fn num_entries(&self) -> usize {
        self.settings.len() * self.times.len() * self.shots
    }
}

/// Optional noise configuration for dataset generation.
#[derive(Clone, Copy, Debug)]
pub struct NoiseConfig {
    pub readout: ReadoutNoise,
    pub depolarization: DepolarizationModel,
}

/// Generates a synthetic dataset under the query model.
///
/// For every grid query the exact outcome distribution is computed, the
/// depolarization channel is applied, then the readout channel, and
/// finally `shots` outcomes are sampled with the counter-based RNG keyed
/// by (seed, query index, shot index). Identical seeds reproduce identical
/// datasets bit-exactly.
pub fn generate_dataset(
    h_true: &HamiltonianModel,
    noise: Option<&NoiseConfig>,
    grid: &QueryGrid,
    seed: u64,
) -> Result<Vec<DatasetEntry>, CoreError> {
    let n = grid.num_qubits();
    if n != h_true.num_qubits() {
        return Err(CoreError::DimensionMismatch {
            expected: h_true.num_qubits(),
            got: n,
        });
    }
    let zero = StateVector::zero_state(n)?;
    let mut entries = Vec::with_capacity(grid.num_entries());
    for (s_idx, (prep, meas)) in grid.settings().iter().enumerate() {
        let psi0 = prep.apply(&zero)?;
        for (t_idx, &t) in grid.times().iter().enumerate() {
            let psi_t = h_true.evolve(&psi0, t)?;
            let mut probs = measurement_probs(&psi_t, meas)?;
            if let Some(cfg) = noise {
                let p_d = depolarization_weight(&cfg.depolarization, t)?;
                probs = depolarize_probs(&probs, p_d, n)?;
                probs = readout_channel(&probs, cfg.readout.q())?;
            }
            let query_index = (s_idx * grid.times().len() + t_idx) as u64;
            let query = Query {
                prep: prep.clone(),
                t,
                meas: meas.clone(),
            };
            for shot in 0..grid.shots() {
                let u = unit_uniform(seed, query_index, shot as u64);
                let outcome = sample_outcome(&probs, u);
                entries.push(DatasetEntry {
                    query: query.clone(),
                    outcome,
                });
            }
        }
    }
    Ok(entries)
}

/// One group of shots sharing an identical (U, t, M) setting.
#[derive(Clone, Debug)]
pub struct QueryGroup {
    pub prep: LocalUnitary,
    pub t: f64,
    pub meas: LocalUnitary,
    /// Outcome multiset as (basis index, shot count), ascending by index.
    pub outcomes: Vec<(usize, usize)>,
    pub total_shots: usize,
}

/// A dataset partitioned by exact (U, t, M) equality, in order of first
/// appearance.
#[derive(Clone, Debug, Default)]
pub struct GroupedDataset {
    pub groups: Vec<QueryGroup>,
}

impl GroupedDataset {
    pub fn total_shots(&self) -> usize {
        self.groups.iter().map(|g| g.total_shots).sum()
    }
}

type GroupKey = (Vec<GateKey>, u64, Vec<GateKey>);

fn group_key(q: &Query) -> GroupKey {
    let gate_keys = |u: &LocalUnitary| u.factors().iter().map(Gate::key).collect::<Vec<_>>();
    (gate_keys(&q.prep), q.t.to_bits(), gate_keys(&q.meas))
}

/// Groups a dataset by identical (U, t, M); stable in order of first
/// appearance, total shot count preserved.
pub fn group_dataset(entries: &[DatasetEntry]) -> GroupedDataset {
    let mut index: HashMap<GroupKey, usize> = HashMap::new();
    let mut groups: Vec<(Query, HashMap<usize, usize>)> = Vec::new();
    for entry in entries {
        let key = group_key(&entry.query);
        let g = *index.entry(key).or_insert_with(|| {
            groups.push((entry.query.clone(), HashMap::new()));
            groups.len() - 1
        });
        *groups[g].1.entry(entry.outcome).or_insert(0) += 1;
    }
    GroupedDataset {
        groups: groups
            .into_iter()
            .map(|(query, counts)| {
                let mut outcomes: Vec<(usize, usize)> = counts.into_iter().collect();
                outcomes.sort_unstable();
                let total_shots = outcomes.iter().map(|(_, c)| c).sum();
                QueryGroup {
                    prep: query.prep,
                    t: query.t,
                    meas: query.meas,
                    outcomes,
                    total_shots,
                }
            })
            .collect(),
    }
}
