//! Scene directories: `points.csv` (newest sweep), `boxes.jsonl`,
//! `camera.json`, `camfeat.bin`, and `frames.json` holding the poses, the
//! older sweeps and the X-ray flags.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{read_boxes_jsonl, write_boxes_jsonl};
use crate::geomkit::{read_points_csv, write_points_csv, RadarFrame, RadarPoint, RigidTransform};
use crate::numkit::{read_tensor, write_tensor};
use crate::viewtrans::CameraModel;

use super::Scene;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FramesFile {
    seed: u64,
    poses: Vec<RigidTransform>,
    /// All sweeps but the newest.
    history: Vec<Vec<RadarPoint>>,
    xray: Vec<Vec<bool>>,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn open(dir: &Path, name: &str) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(dir.join(name))?))
}

pub fn save_scene_dir(scene: &Scene, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (last, history) = scene
        .frames
        .split_last()
        .ok_or_else(|| Error::Format("scene has no frames".into()))?;
    write_points_csv(create(dir, "points.csv")?, &last.points)?;
    write_boxes_jsonl(create(dir, "boxes.jsonl")?, &scene.boxes)?;
    scene.camera.write_json(create(dir, "camera.json")?)?;
    let mut w = create(dir, "camfeat.bin")?;
    write_tensor(&mut w, &scene.camera_features)?;
    w.flush()?;
    let frames = FramesFile {
        seed: scene.seed,
        poses: scene.frames.iter().map(|f| f.pose).collect(),
        history: history.iter().map(|f| f.points.clone()).collect(),
        xray: scene.xray.clone(),
    };
    let mut w = create(dir, "frames.json")?;
    serde_json::to_writer(&mut w, &frames)?;
    w.flush()?;
    Ok(())
}

pub fn load_scene_dir(dir: &Path) -> Result<Scene> {
    let current = read_points_csv(open(dir, "points.csv")?)?;
    let boxes = read_boxes_jsonl(open(dir, "boxes.jsonl")?)?;
    let camera = CameraModel::read_json(open(dir, "camera.json")?)?;
    let camera_features = read_tensor(&mut open(dir, "camfeat.bin")?)?;
    let f: FramesFile = serde_json::from_reader(open(dir, "frames.json")?)?;
    if f.poses.len() != f.history.len() + 1 || f.xray.len() != f.poses.len() {
        return Err(Error::Format(format!(
            "frames.json lists {} poses, {} older sweeps and {} X-ray masks",
            f.poses.len(),
            f.history.len(),
            f.xray.len()
        )));
    }
    let mut frames: Vec<RadarFrame> = f
        .history
        .into_iter()
        .zip(&f.poses)
        .map(|(points, pose)| RadarFrame { points, pose: *pose })
        .collect();
    frames.push(RadarFrame {
        points: current,
        pose: *f.poses.last().expect("nonempty"),
    });
    for (fr, mask) in frames.iter().zip(&f.xray) {
        if fr.points.len() != mask.len() {
            return Err(Error::Format("X-ray mask length does not match its sweep".into()));
        }
    }
    Ok(Scene {
        seed: f.seed,
        boxes,
        frames,
        xray: f.xray,
        camera,
        camera_features,
    })
}
