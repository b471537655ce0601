use std::collections::BTreeMap;

use serde::Serialize;

use super::encoder::{AttentionTap, Axis, TrackOrder};
use crate::data::Batch;
use crate::error::{BatError, Result};
use crate::numerics::Tape;

/// One attention weight: query position attending to key position along
/// `pass_axis`, within the lane fixed by `lane_index` on the other axis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionRecord {
    pub sample_id: String,
    pub track: usize,
    pub track_order: TrackOrder,
    pub pass_axis: Axis,
    pub layer: usize,
    pub head: usize,
    /// Sensor index for time passes, time index for sensor passes.
    pub lane_index: usize,
    pub query_axis_index: usize,
    pub key_axis_index: usize,
    pub weight: f64,
}

/// Expands captured attention nodes into records, dropping padded time
/// steps. `orders[i]` is the axis order of track `i`.
pub fn attention_records(
    tape: &Tape,
    taps: &[AttentionTap],
    batch: &Batch,
    orders: &[TrackOrder],
) -> Result<Vec<AttentionRecord>> {
    let (b, t, d) = (batch.b, batch.t, batch.d);
    let pad = batch.padding.data();
    let real = |bi: usize, ti: usize| pad[bi * t + ti] > 0.0;
    let mut out = Vec::new();
    for tap in taps {
        let (probs, [lanes, heads, seq]) = tape
            .attention_weights(tap.var)
            .ok_or_else(|| BatError::State("captured node is not an attention node".into()))?;
        let order = *orders.get(tap.track).ok_or_else(|| BatError::Argument(format!("no order for track {}", tap.track)))?;
        let (expected_lanes, expected_seq) = match tap.axis {
            Axis::Time => (b * d, t),
            Axis::Sensor => (b * t, d),
        };
        if lanes != expected_lanes || seq != expected_seq {
            return Err(BatError::dim(format!("attention of {lanes}x{seq} does not match batch {b}x{t}x{d}")));
        }
        for lane in 0..lanes {
            let (bi, lane_index) = (lane / (lanes / b), lane % (lanes / b));
            if tap.axis == Axis::Sensor && !real(bi, lane_index) {
                continue;
            }
            for h in 0..heads {
                let base = (lane * heads + h) * seq * seq;
                for qi in 0..seq {
                    if tap.axis == Axis::Time && !real(bi, qi) {
                        continue;
                    }
                    for ki in 0..seq {
                        if tap.axis == Axis::Time && !real(bi, ki) {
                            continue;
                        }
                        out.push(AttentionRecord {
                            sample_id: batch.sample_ids[bi].clone(),
                            track: tap.track,
                            track_order: order,
                            pass_axis: tap.axis,
                            layer: tap.layer,
                            head: h,
                            lane_index,
                            query_axis_index: qi,
                            key_axis_index: ki,
                            weight: probs[base + qi * seq + ki],
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Keeps the `k` largest weights for each (sample, track, pass axis), in
/// descending weight order; ties keep their original order.
pub fn top_k_per_pass(records: &[AttentionRecord], k: usize) -> Vec<AttentionRecord> {
    let mut groups: BTreeMap<(String, usize, &'static str), Vec<&AttentionRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.sample_id.clone(), r.track, r.pass_axis.as_str())).or_default().push(r);
    }
    let mut out = Vec::new();
    for (_, mut group) in groups {
        group.sort_by(|a, b| b.weight.total_cmp(&a.weight));
        out.extend(group.into_iter().take(k).cloned());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(track: usize, axis: Axis, w: f64) -> AttentionRecord {
        AttentionRecord {
            sample_id: "s".into(),
            track,
            track_order: TrackOrder::TimeThenSensor,
            pass_axis: axis,
            layer: 0,
            head: 0,
            lane_index: 0,
            query_axis_index: 0,
            key_axis_index: 0,
            weight: w,
        }
    }

    #[test]
    fn top_k_groups_by_track_and_axis() {
        let mut rs = Vec::new();
        for i in 0..30 {
            rs.push(rec(0, Axis::Time, i as f64 / 30.0));
            rs.push(rec(0, Axis::Sensor, i as f64 / 30.0));
            rs.push(rec(1, Axis::Time, i as f64 / 30.0));
        }
        let top = top_k_per_pass(&rs, 20);
        assert_eq!(top.len(), 60);
        let first: Vec<f64> = top.iter().filter(|r| r.track == 1).map(|r| r.weight).collect();
        assert_eq!(first[0], 29.0 / 30.0);
        assert!(first.windows(2).all(|w| w[0] >= w[1]));
    }
}
