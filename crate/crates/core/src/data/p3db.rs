//! Binary 3D pose database.
//!
//! Little-endian: magic `P3DB`, `u64` pose count, `u8` joint count, then
//! `count · J · 3` `f32` millimeters.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pose::{JointLayout, Skeleton3D};

pub const MAGIC: &[u8; 4] = b"P3DB";

pub fn encode_pose_db(poses: &[Skeleton3D], num_joints: usize) -> Result<Vec<u8>> {
    let j = u8::try_from(num_joints).map_err(|_| Error::Format("more than 255 joints".into()))?;
    let mut out = Vec::with_capacity(13 + poses.len() * num_joints * 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(poses.len() as u64).to_le_bytes());
    out.push(j);
    for (i, p) in poses.iter().enumerate() {
        if p.num_joints() != num_joints {
            return Err(Error::Validation(format!(
                "pose {i} has {} joints, expected {num_joints}",
                p.num_joints()
            )));
        }
        for v in p.flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes a database; every pose must be finite and is re-aligned at
/// `layout.root`.
pub fn decode_pose_db(bytes: &[u8], layout: &JointLayout) -> Result<Vec<Skeleton3D>> {
    if bytes.len() < 13 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a P3DB file".into()));
    }
    let count = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let j = bytes[12] as usize;
    if j != layout.num_joints() {
        return Err(Error::Version(format!(
            "pose database has {j} joints, layout has {}",
            layout.num_joints()
        )));
    }
    let expected = (count as u128) * (j as u128) * 12 + 13;
    if expected != bytes.len() as u128 {
        return Err(Error::Format(format!(
            "pose database size {} does not match {count} poses of {j} joints",
            bytes.len()
        )));
    }
    let floats: Vec<f32> = bytes[13..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    floats
        .chunks_exact(j * 3)
        .enumerate()
        .map(|(i, c)| {
            let p = Skeleton3D::from_flat(c);
            if !p.is_finite() {
                return Err(Error::Validation(format!("pose {i} in database is not finite")));
            }
            Ok(p.center_at(layout.root))
        })
        .collect()
}

pub fn write_pose_db(path: &Path, poses: &[Skeleton3D], num_joints: usize) -> Result<()> {
    let bytes = encode_pose_db(poses, num_joints)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pose_db(path: &Path, layout: &JointLayout) -> Result<Vec<Skeleton3D>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pose_db(&bytes, layout).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn centered(data: Vec<f32>) -> Skeleton3D {
        Skeleton3D::from_flat(&data).center_at_neck()
    }

    proptest! {
        #[test]
        fn roundtrip(raw in prop::collection::vec(prop::collection::vec(-2000.0f32..2000.0, 27), 0..20)) {
            let poses: Vec<_> = raw.into_iter().map(centered).collect();
            let bytes = encode_pose_db(&poses, 9).unwrap();
            prop_assert_eq!(bytes.len(), 13 + poses.len() * 108);
            let back = decode_pose_db(&bytes, &JointLayout::upper_body()).unwrap();
            prop_assert_eq!(back, poses);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_pose_db(&[Skeleton3D::new(vec![[0.0; 3]; 9])], 9).unwrap();
        assert_eq!(&bytes[..4], b"P3DB");
        assert_eq!(&bytes[4..12], &1u64.to_le_bytes());
        assert_eq!(bytes[12], 9);
    }

    #[test]
    fn corrupt_inputs() {
        let layout = JointLayout::upper_body();
        let mut bytes = encode_pose_db(&[Skeleton3D::new(vec![[1.0; 3]; 9])], 9).unwrap();
        assert!(matches!(decode_pose_db(&bytes[..20], &layout), Err(Error::Format(_))));
        bytes[13..17].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_pose_db(&bytes, &layout), Err(Error::Validation(_))));
        bytes[12] = 17;
        assert!(matches!(decode_pose_db(&bytes, &layout), Err(Error::Version(_))));
        assert!(matches!(decode_pose_db(b"nope", &layout), Err(Error::Format(_))));
    }
}
