#![allow(dead_code)]

use std::path::{Path, PathBuf};

use agest_core::network::{build_toy_age_net, weights, GraphSpecFile};
use agest_core::preprocess::{sepia_tone, RawImage};

pub const TOY_SIDE: usize = 16;

/// Toy model and spec written into `dir`; returns the weight path.
pub fn write_toy_model(dir: &Path, seed: u64) -> PathBuf {
    let mut g = build_toy_age_net(TOY_SIDE, 101).unwrap();
    g.randomize_weights(seed);
    let model = dir.join("model.agew");
    weights::save_weights(&g, &model).unwrap();
    GraphSpecFile::from_graph(&g, Some(vec![100.0, 110.0, 120.0]))
        .write(&model.with_extension("toml"))
        .unwrap();
    model
}

/// Deterministic synthetic face-sized image; every third is sepia, every
/// fifth monochrome.
pub fn synthetic_image(i: usize) -> RawImage {
    let w = 20 + (i % 7) as u32 * 3;
    let h = 18 + (i % 5) as u32 * 4;
    RawImage::from_fn(w, h, |x, y| {
        let base = [
            ((x * 11 + y * 3 + i as u32 * 17) % 256) as u8,
            ((x * 5 + y * 13 + i as u32 * 29) % 256) as u8,
            ((x * 7 + y * 7 + i as u32 * 43) % 256) as u8,
        ];
        if i.is_multiple_of(5) {
            let g = base[0];
            [g, g, g]
        } else if i.is_multiple_of(3) {
            sepia_tone(base)
        } else {
            base
        }
    })
    .unwrap()
}

/// `n` PNG images named `img000.png`...; indices in `corrupt` get garbage.
pub fn write_images(dir: &Path, n: usize, corrupt: &[usize]) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    (0..n)
        .map(|i| {
            let path = dir.join(format!("img{i:03}.png"));
            if corrupt.contains(&i) {
                std::fs::write(&path, b"\x89PNG but not really").unwrap();
            } else {
                std::fs::write(&path, synthetic_image(i).to_png()).unwrap();
            }
            path
        })
        .collect()
}

/// Manifest CSV text for `n` subjects `{prefix}{k}` aged `k % 80 + 5`.
pub fn manifest_text(prefix: &str, n: usize) -> String {
    let mut s = String::from("subject_id,file_path,age,gender,source,crop_x,crop_y,crop_w,crop_h,rotation_deg,notes\n");
    for k in 0..n {
        let gender = if k % 2 == 0 { "female" } else { "male" };
        s.push_str(&format!(
            "{prefix}{k:03},{prefix}{k:03}_{}.jpg,{},{gender},{prefix},,,,,,\n",
            k % 80 + 5,
            k % 80 + 5
        ));
    }
    s
}

/// Subject ids and ages of a FG-NET-shaped collection: 1002 images of 82
/// subjects, each subject with distinct ages and at least one at or below 20.
pub fn fgnet_layout() -> Vec<(String, u32)> {
    let mut out = Vec::new();
    for s in 0..82u32 {
        let count = if s < 18 { 13 } else { 12 };
        let mut age = s % 15;
        for j in 0..count {
            out.push((format!("fg{s:03}"), age));
            age += 1 + (s + j) % 5;
        }
    }
    out
}
