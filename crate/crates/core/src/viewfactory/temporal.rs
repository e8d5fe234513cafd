use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, check_tile, render_view, sample_crop};
use super::{AugmentConfig, AugmentedView, PhotometricRecipe, SourceTile, ViewError};
use crate::fieldstore::{FlightTime, RevisitGroup, TileRecord, MIN_TEMPORAL_FLIGHTS};

/// Which flight feeds which key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemcoAssignment {
    /// k0 = T(t2), k1 = T_crop(t3) in q's window, k2 = T(t1).
    #[default]
    Invariance,
    /// k0 = T(t1), k1 = T_crop(t2) in q's window, k2 = T(t1).
    Literal,
}

/// Query plus the three keys, one per invariance sub-space.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalTriplet {
    pub q: AugmentedView,
    /// Joint (temporal and artificial) key.
    pub k0: AugmentedView,
    /// Temporal-only key, same crop window as `q`.
    pub k1: AugmentedView,
    /// Artificial-only key, same flight as `q`.
    pub k2: AugmentedView,
    pub times: (FlightTime, FlightTime, FlightTime),
}

/// One location seen on every flight of a field, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalStack {
    pub field_id: String,
    pub flights: Vec<SourceTile>,
}

impl TemporalStack {
    pub fn from_group(group: &RevisitGroup, tile_origin: (usize, usize), tile_size: usize) -> Result<Self, ViewError> {
        let (row, col) = tile_origin;
        if row + tile_size > group.height() || col + tile_size > group.width() {
            return Err(ViewError::OriginOutOfBounds {
                row,
                col,
                tile_size,
                height: group.height(),
                width: group.width(),
            });
        }
        let flights = group
            .scenes
            .iter()
            .map(|s| {
                SourceTile::from_record(&TileRecord {
                    field_id: s.field_id.clone(),
                    flight_time: s.flight_time,
                    row_origin: row,
                    col_origin: col,
                    tile_size,
                    pixels: s.crop_square(row, col, tile_size),
                })
            })
            .collect();
        Ok(TemporalStack {
            field_id: group.field_id.clone(),
            flights,
        })
    }

    pub fn is_eligible(&self) -> bool {
        self.flights.len() >= MIN_TEMPORAL_FLIGHTS
    }
}

pub fn sample_temporal_triplet(
    group: &RevisitGroup,
    tile_origin: (usize, usize),
    tile_size: usize,
    cfg: &AugmentConfig,
    assignment: TemcoAssignment,
    rng: &mut impl Rng,
) -> Result<TemporalTriplet, ViewError> {
    if !group.is_temporal_eligible() {
        return Err(ViewError::Ineligible {
            field_id: group.field_id.clone(),
            flights: group.len(),
        });
    }
    let stack = TemporalStack::from_group(group, tile_origin, tile_size)?;
    sample_triplet_from_stack(&stack, cfg, assignment, rng)
}

pub fn sample_triplet_from_stack(
    stack: &TemporalStack,
    cfg: &AugmentConfig,
    assignment: TemcoAssignment,
    rng: &mut impl Rng,
) -> Result<TemporalTriplet, ViewError> {
    if !stack.is_eligible() {
        return Err(ViewError::Ineligible {
            field_id: stack.field_id.clone(),
            flights: stack.flights.len(),
        });
    }
    let picks = rand::seq::index::sample(rng, stack.flights.len(), 3);
    let (t1, t2, t3) = (
        &stack.flights[picks.index(0)],
        &stack.flights[picks.index(1)],
        &stack.flights[picks.index(2)],
    );
    check_tile(t1, cfg)?;

    let window = sample_crop(t1.height(), t1.width(), cfg, false, rng);
    let q = render_view(t1, window, PhotometricRecipe::none());
    let (k0_src, k1_src) = match assignment {
        TemcoAssignment::Invariance => (t2, t3),
        TemcoAssignment::Literal => (t1, t2),
    };
    let k0 = augment(k0_src, cfg, rng);
    let k1 = render_view(k1_src, window, PhotometricRecipe::none());
    let k2 = augment(t1, cfg, rng);
    Ok(TemporalTriplet {
        q,
        k0,
        k1,
        k2,
        times: (t1.source.flight_time, t2.source.flight_time, t3.source.flight_time),
    })
}

/// Check the structural properties every triplet drawn under `assignment` has.
pub fn triplet_invariants_hold(t: &TemporalTriplet, assignment: TemcoAssignment) -> bool {
    let flight = |v: &AugmentedView| v.source.flight_time;
    let shared = t.q.geometry == t.k1.geometry
        && t.q.photometric.is_identity()
        && t.k1.photometric.is_identity()
        && !t.q.geometry.hflip
        && flight(&t.k2) == flight(&t.q)
        && flight(&t.k1) != flight(&t.q);
    shared
        && match assignment {
            TemcoAssignment::Invariance => flight(&t.k0) != flight(&t.q) && flight(&t.k0) != flight(&t.k1),
            TemcoAssignment::Literal => flight(&t.k0) == flight(&t.q),
        }
}

/// Visit order of `n` items in `epoch`: a fresh permutation per epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Endless stream of group indices; every group is drawn once per pass.
#[derive(Debug, Clone)]
pub struct GroupSampler {
    n: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl GroupSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        assert!(n > 0, "sampler needs at least one group");
        GroupSampler {
            n,
            seed,
            epoch: 0,
            order: epoch_order(n, seed, 0),
            pos: 0,
        }
    }
}

impl Iterator for GroupSampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.pos == self.n {
            self.epoch += 1;
            self.order = epoch_order(self.n, self.seed, self.epoch);
            self.pos = 0;
        }
        self.pos += 1;
        Some(self.order[self.pos - 1])
    }
}
