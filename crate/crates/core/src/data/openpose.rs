//! Importer for OpenPose keypoint JSON (`BODY_25` or `COCO` 18-joint).

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::pose::{joint, Skeleton2D, NUM_JOINTS};

#[derive(Debug, Deserialize)]
struct Frame {
    people: Vec<Person>,
}

#[derive(Debug, Deserialize)]
struct Person {
    pose_keypoints_2d: Vec<f32>,
}

/// Maps the first detected person to the upper-body layout. Returns `None`
/// when the frame has no people.
pub fn parse_openpose(json: &str) -> Result<Option<Skeleton2D>> {
    let frame: Frame = serde_json::from_str(json).map_err(|e| Error::Format(format!("openpose json: {e}")))?;
    let Some(person) = frame.people.first() else {
        return Ok(None);
    };
    let k = &person.pose_keypoints_2d;
    if k.len() % 3 != 0 {
        return Err(Error::Format("keypoint array length is not a multiple of 3".into()));
    }
    let count = k.len() / 3;
    if count != 25 && count != 18 {
        return Err(Error::Format(format!("unsupported keypoint count {count}")));
    }
    let point = |i: usize| [k[3 * i], k[3 * i + 1], k[3 * i + 2]];
    // Head (nose), neck, right arm, left arm share indices in both formats.
    let mut out: Vec<[f32; 3]> = (0..joint::HIP).map(point).collect();
    let hip = if count == 25 {
        point(8)
    } else {
        let (r, l) = (point(8), point(11));
        if r[2] > 0.0 && l[2] > 0.0 {
            [(r[0] + l[0]) / 2.0, (r[1] + l[1]) / 2.0, r[2].min(l[2])]
        } else if r[2] > 0.0 {
            r
        } else {
            l
        }
    };
    out.push(hip);
    debug_assert_eq!(out.len(), NUM_JOINTS);
    Skeleton2D::with_confidence(
        out.iter().map(|p| [p[0], p[1]]).collect(),
        out.iter().map(|p| p[2].clamp(0.0, 1.0)).collect(),
    )
    .map(Some)
}
