use crate::sim::ObservedRecord;

/// Exposure and event indicator of one subject within one hazard interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoRow {
    pub exposure: f64,
    pub event: bool,
    /// Zero-based interval index.
    pub interval: usize,
    pub x: f64,
    pub arm: u8,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoExpansion {
    pub rows: Vec<PseudoRow>,
    /// Subjects with `U = 0` contribute no exposure and are skipped.
    pub dropped: usize,
}

/// Splits each subject's follow-up over the intervals `[τ_{j−1}, τ_j)` of its
/// arm. A subject followed past `τ_j` gets the full interval length; the
/// interval containing `U` gets `U − τ_{j−1}` and carries the event flag.
pub fn expand_pseudo(records: &[ObservedRecord], change_points: [&[f64]; 2]) -> PseudoExpansion {
    let mut out = PseudoExpansion::default();
    for r in records {
        if r.time <= 0.0 {
            out.dropped += 1;
            continue;
        }
        let cps = change_points[usize::from(r.arm.min(1))];
        let mut start = 0.0;
        for j in 0..=cps.len() {
            let end = cps.get(j).copied().unwrap_or(f64::INFINITY);
            if r.time >= end {
                out.rows.push(PseudoRow {
                    exposure: end - start,
                    event: false,
                    interval: j,
                    x: r.x,
                    arm: r.arm,
                });
                start = end;
                continue;
            }
            let exposure = r.time - start;
            if exposure > 0.0 {
                out.rows.push(PseudoRow {
                    exposure,
                    event: r.event,
                    interval: j,
                    x: r.x,
                    arm: r.arm,
                });
            } else if r.event {
                // U sits exactly on a change point: the later interval would
                // have zero exposure, so the event closes the earlier one.
                if let Some(last) = out.rows.last_mut() {
                    last.event = true;
                }
            }
            break;
        }
    }
    out
}
