use std::collections::BTreeMap;

use super::{FieldError, FieldScene};

/// Temporal contrast draws three distinct flights from a group.
pub const MIN_TEMPORAL_FLIGHTS: usize = 3;

/// All flights of one field, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct RevisitGroup {
    pub field_id: String,
    pub scenes: Vec<FieldScene>,
}

impl RevisitGroup {
    /// Build a group, checking the shared-geometry invariant and sorting by time.
    pub fn new(field_id: impl Into<String>, mut scenes: Vec<FieldScene>) -> Result<RevisitGroup, FieldError> {
        let field_id = field_id.into();
        scenes.sort_by_key(|s| s.flight_time);
        check_consistent(&field_id, &scenes)?;
        Ok(RevisitGroup { field_id, scenes })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn is_temporal_eligible(&self) -> bool {
        self.scenes.len() >= MIN_TEMPORAL_FLIGHTS
    }

    pub fn height(&self) -> usize {
        self.scenes[0].height
    }

    pub fn width(&self) -> usize {
        self.scenes[0].width
    }
}

fn check_consistent(field_id: &str, scenes: &[FieldScene]) -> Result<(), FieldError> {
    let Some(first) = scenes.first() else {
        return Err(FieldError::InconsistentGroup {
            field_id: field_id.to_string(),
            detail: "no scenes".into(),
        });
    };
    for s in scenes {
        let mut problems = Vec::new();
        if s.field_id != field_id {
            problems.push(format!("field id `{}`", s.field_id));
        }
        if (s.height, s.width) != (first.height, first.width) {
            problems.push(format!(
                "{} is {}x{} but {} is {}x{}",
                s.flight_time, s.height, s.width, first.flight_time, first.height, first.width
            ));
        }
        if s.gsd_cm != first.gsd_cm {
            problems.push(format!("gsd {} vs {} cm", s.gsd_cm, first.gsd_cm));
        }
        if s.depth() != first.depth() {
            problems.push("mixed bit depths".into());
        }
        if !problems.is_empty() {
            return Err(FieldError::InconsistentGroup {
                field_id: field_id.to_string(),
                detail: problems.join("; "),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedGroup {
    pub field_id: String,
    pub scenes: Vec<FieldScene>,
    pub reason: String,
}

/// Every input scene lands in exactly one of `groups` or `rejected`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RevisitIndex {
    pub groups: Vec<RevisitGroup>,
    pub rejected: Vec<RejectedGroup>,
}

impl RevisitIndex {
    pub fn eligible(&self) -> impl Iterator<Item = &RevisitGroup> {
        self.groups.iter().filter(|g| g.is_temporal_eligible())
    }

    pub fn ineligible(&self) -> impl Iterator<Item = &RevisitGroup> {
        self.groups.iter().filter(|g| !g.is_temporal_eligible())
    }

    pub fn num_scenes(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum::<usize>() + self.rejected.iter().map(|g| g.scenes.len()).sum::<usize>()
    }
}

/// Group scenes by field id, ordered by field id and then by flight time.
pub fn build_revisit_index(scenes: Vec<FieldScene>) -> RevisitIndex {
    let mut by_field: BTreeMap<String, Vec<FieldScene>> = BTreeMap::new();
    for s in scenes {
        by_field.entry(s.field_id.clone()).or_default().push(s);
    }
    let mut index = RevisitIndex::default();
    for (field_id, mut scenes) in by_field {
        scenes.sort_by_key(|s| s.flight_time);
        match check_consistent(&field_id, &scenes) {
            Ok(()) => index.groups.push(RevisitGroup { field_id, scenes }),
            Err(e) => {
                log::warn!("{e}");
                index.rejected.push(RejectedGroup {
                    field_id,
                    scenes,
                    reason: e.to_string(),
                })
            }
        }
    }
    index
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldstore::{FlightTime, Samples};

    fn scene(field: &str, day: i64, size: usize) -> FieldScene {
        let base = FlightTime::parse("2019-05-01T12:00:00Z").unwrap();
        FieldScene::new(field, FlightTime::from_days(&base, day), 10.0, size, size, Samples::U8(vec![0; size * size * 4]))
            .unwrap()
    }

    #[test]
    fn eligibility_and_sorting() {
        let idx = build_revisit_index(vec![scene("A", 30, 8), scene("B", 0, 8), scene("A", 0, 8), scene("A", 7, 8)]);
        assert_eq!(idx.groups.len(), 2);
        let a: Vec<_> = idx.eligible().collect();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].field_id, "A");
        assert!(a[0].scenes.windows(2).all(|w| w[0].flight_time < w[1].flight_time));
        assert_eq!(idx.ineligible().next().unwrap().field_id, "B");
        assert_eq!(idx.num_scenes(), 4);
    }

    #[test]
    fn inconsistent_dimensions_reject_group() {
        let idx = build_revisit_index(vec![scene("A", 0, 64), scene("A", 1, 128), scene("B", 0, 8)]);
        assert_eq!(idx.rejected.len(), 1);
        assert_eq!(idx.rejected[0].field_id, "A");
        assert!(idx.rejected[0].reason.contains("64x64"));
        assert_eq!(idx.groups.len(), 1);
    }
}
