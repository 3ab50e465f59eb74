//! On-disk scene layout.
//!
//! ```text
//! images/<id>.png          view images
//! cams/<id>_cam.txt        camera files
//! depths_gt/<id>.pfm       ground-truth depth (optional)
//! covis/<id>_<other>.png   co-visibility labels of view <id> in <other> (optional)
//! reference.ply            ground-truth surface samples (optional)
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use robust_mvs::fusion::{backproject, PointCloud};
use robust_mvs::imaging::{DepthMap, View};
use robust_mvs::io;
use robust_mvs::synth::{render, Covisibility, Scene};

pub fn view_id(i: usize) -> String {
    format!("{i:08}")
}

/// Pixel values of the co-visibility PNGs.
pub fn covisibility_code(c: Covisibility) -> u8 {
    match c {
        Covisibility::Visible => 255,
        Covisibility::Occluded => 128,
        Covisibility::OutOfView => 0,
    }
}

/// File stems of `dir` ending in `suffix`, sorted.
pub fn stems(dir: &Path, suffix: &str) -> Result<BTreeSet<String>> {
    let entries = fs::read_dir(dir).with_context(|| format!("{}", dir.display()))?;
    let mut out = BTreeSet::new();
    for e in entries {
        let name = e.with_context(|| format!("{}", dir.display()))?.file_name();
        if let Some(stem) = name.to_string_lossy().strip_suffix(suffix) {
            if !stem.is_empty() && !stem.starts_with('.') {
                out.insert(stem.to_string());
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SceneDir {
    pub root: PathBuf,
    /// View ids in index order.
    pub ids: Vec<String>,
}

impl SceneDir {
    /// Lists the views of `root`; every image needs a camera file and vice versa.
    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            bail!("scene directory {} does not exist", root.display());
        }
        let images = stems(&root.join("images"), ".png")?;
        let cams = stems(&root.join("cams"), "_cam.txt")?;
        if let Some(id) = cams.difference(&images).next() {
            bail!("view {id}: missing image {}", root.join("images").join(format!("{id}.png")).display());
        }
        if let Some(id) = images.difference(&cams).next() {
            bail!("view {id}: missing camera file {}", root.join("cams").join(format!("{id}_cam.txt")).display());
        }
        if images.is_empty() {
            bail!("scene directory {} has no views", root.display());
        }
        Ok(Self {
            root: root.to_path_buf(),
            ids: images.into_iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.root.join("images").join(format!("{}.png", self.ids[i]))
    }

    pub fn camera_path(&self, i: usize) -> PathBuf {
        self.root.join("cams").join(format!("{}_cam.txt", self.ids[i]))
    }

    pub fn gt_depth_path(&self, i: usize) -> PathBuf {
        self.root.join("depths_gt").join(format!("{}.pfm", self.ids[i]))
    }

    /// Every image and camera.
    pub fn load_views(&self) -> Result<Vec<View>> {
        (0..self.len())
            .map(|i| {
                let image = io::read_image(&self.image_path(i))?;
                let camera = io::read_camera(&self.camera_path(i), image.width(), image.height())?;
                Ok(View { image, camera })
            })
            .collect()
    }

    pub fn load_gt_depth(&self, i: usize) -> Result<DepthMap> {
        let path = self.gt_depth_path(i);
        if !path.is_file() {
            bail!("view {}: missing ground-truth depth {}", self.ids[i], path.display());
        }
        Ok(io::read_depth_pfm(&path)?)
    }
}

/// Renders every view of `scene` into the directory layout above, with
/// `reference.ply` holding the back-projected true depth of every view.
pub fn write_scene(scene: &Scene, root: &Path, ply_format: io::PlyFormat) -> Result<()> {
    scene.validate()?;
    for sub in ["images", "cams", "depths_gt", "covis"] {
        fs::create_dir_all(root.join(sub)).with_context(|| format!("{}", root.join(sub).display()))?;
    }
    let mut reference = PointCloud::default();
    for v in 0..scene.cameras.len() {
        let r = render(scene, v)?;
        let id = view_id(v);
        io::write_image_png16(&root.join("images").join(format!("{id}.png")), &r.image)?;
        io::write_camera(&root.join("cams").join(format!("{id}_cam.txt")), &scene.cameras[v])?;
        io::write_depth_pfm(&root.join("depths_gt").join(format!("{id}.pfm")), &r.depth)?;
        for map in &r.covisibility {
            let codes: Vec<u8> = map.labels.iter().map(|&c| covisibility_code(c)).collect();
            let path = root.join("covis").join(format!("{id}_{}.png", view_id(map.other)));
            io::write_gray8_png(&path, map.width, map.height, &codes)?;
        }
        let part = backproject(&r.depth, &scene.cameras[v], &r.image)?;
        for ((p, c), s) in part.points.into_iter().zip(part.colors).zip(part.support) {
            reference.push(p, c, s);
        }
    }
    io::write_ply(&root.join("reference.ply"), &reference, ply_format)?;
    Ok(())
}
