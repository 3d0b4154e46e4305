//! On-disk dataset: frame directories, manifest, and in-memory samples.
//!
//! ```text
//! <out>/manifest.txt
//! <out>/frame_000000/lidar_t0.bin      little-endian f32 x y z triplets
//! <out>/frame_000000/lidar_t-1.bin
//! <out>/frame_000000/lidar_t-2.bin
//! <out>/frame_000000/pose_t0.txt       "x y yaw"
//! <out>/frame_000000/pose_t-1.txt
//! <out>/frame_000000/pose_t-2.txt
//! <out>/frame_000000/image.ppm         400×300 P6
//! <out>/frame_000000/labels.txt        see sim::labels
//! ```
//! Each sweep is stored in the ego frame it was captured in; alignment
//! happens when the pseudo-image is built.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{contract_err, Error, Result};
use crate::image::RgbImage;
use crate::model::{ModelInput, Targets};
use crate::sensor::{build_pseudo_image, crop_image, BevConfig, CameraImage, CropAnchor, EgoPose, LidarPseudoImage, PointCloud, BEV_SIZE, CAMERA_SIZE, LIDAR_FRAMES};
use crate::sim::expert::Expert;
use crate::sim::labels::FrameLabels;
use crate::sim::run::{Episode, SimConfig};
use crate::sim::scenario::{generate_scenario, lead_vehicle_scenario, Scenario, Weather};
use crate::sim::sensors::{synth_sensors, SensorFrame};
use crate::tensor::{Element, Tensor};

const MAX_POINTS: usize = 1 << 24;

pub fn encode_lidar_bin(pc: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(pc.points.len() * 12);
    for p in &pc.points {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_lidar_bin(bytes: &[u8], frame_time_index: i32) -> Result<PointCloud> {
    if bytes.len() % 12 != 0 {
        return Err(Error::parse("lidar", format!("{} bytes is not a whole number of xyz triplets", bytes.len())));
    }
    if bytes.len() / 12 > MAX_POINTS {
        return Err(Error::parse("lidar", "too many points"));
    }
    let mut points = Vec::with_capacity(bytes.len() / 12);
    for c in bytes.chunks_exact(12) {
        let f = |i: usize| f32::from_le_bytes([c[i], c[i + 1], c[i + 2], c[i + 3]]) as f64;
        let p = [f(0), f(4), f(8)];
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse("lidar", format!("non-finite coordinate in point {}", points.len())));
        }
        points.push(p);
    }
    Ok(PointCloud::new(points, frame_time_index))
}

pub fn format_pose(p: &EgoPose) -> String {
    format!("{} {} {}\n", p.x, p.y, p.yaw)
}

pub fn parse_pose(text: &str) -> Result<EgoPose> {
    let f: Vec<&str> = text.split_whitespace().collect();
    if f.len() != 3 {
        return Err(Error::parse("pose", format!("expected `x y yaw`, got {} fields", f.len())));
    }
    let mut v = [0.0; 3];
    for (o, t) in v.iter_mut().zip(&f) {
        *o = match t.parse::<f64>() {
            Ok(x) if x.is_finite() => x,
            _ => return Err(Error::parse("pose", format!("bad number `{t}`"))),
        };
    }
    Ok(EgoPose::new(v[0], v[1], v[2]))
}

fn frame_suffix(i: usize) -> String {
    let t = i as i32 - (LIDAR_FRAMES as i32 - 1);
    format!("t{t}")
}

/// File names every frame directory must contain.
pub fn frame_files() -> Vec<String> {
    let mut v = Vec::new();
    for i in 0..LIDAR_FRAMES {
        v.push(format!("lidar_{}.bin", frame_suffix(i)));
        v.push(format!("pose_{}.txt", frame_suffix(i)));
    }
    v.push("image.ppm".into());
    v.push("labels.txt".into());
    v
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_frame(dir: &Path, f: &SensorFrame) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for i in 0..LIDAR_FRAMES {
        let t = frame_suffix(i);
        write(&dir.join(format!("lidar_{t}.bin")), &encode_lidar_bin(&f.clouds[i]))?;
        write(&dir.join(format!("pose_{t}.txt")), format_pose(&f.poses[i]).as_bytes())?;
    }
    write(&dir.join("image.ppm"), &f.camera.encode_ppm())?;
    write(&dir.join("labels.txt"), f.labels.serialize().as_bytes())
}

/// A frame as stored on disk.
#[derive(Debug, Clone)]
pub struct RawFrame {
    pub clouds: Vec<PointCloud>,
    pub poses: Vec<EgoPose>,
    pub camera: RgbImage,
    pub labels: FrameLabels,
}

pub fn read_frame(dir: &Path) -> Result<RawFrame> {
    let missing: Vec<String> = frame_files().into_iter().filter(|f| !dir.join(f).is_file()).collect();
    if !missing.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("missing {}", missing.join(", "))),
        ));
    }
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read(&p).map_err(|e| Error::io(p, e))
    };
    let text = |name: &str| -> Result<String> {
        String::from_utf8(read(name)?).map_err(|_| Error::parse(name.to_string(), "not valid UTF-8"))
    };
    let mut clouds = Vec::new();
    let mut poses = Vec::new();
    for i in 0..LIDAR_FRAMES {
        let t = frame_suffix(i);
        clouds.push(decode_lidar_bin(&read(&format!("lidar_{t}.bin"))?, i as i32 - (LIDAR_FRAMES as i32 - 1))?);
        poses.push(parse_pose(&text(&format!("pose_{t}.txt"))?)?);
    }
    Ok(RawFrame {
        clouds,
        poses,
        camera: RgbImage::decode_ppm(&read("image.ppm")?)?,
        labels: FrameLabels::parse(&text("labels.txt")?)?,
    })
}

/// Builds network inputs from raw sensors (clouds and poses oldest first).
pub fn model_input<T: Element>(
    clouds: &[PointCloud],
    poses: &[EgoPose],
    camera: &RgbImage,
    goal: [f64; 2],
    bev: &BevConfig,
) -> Result<ModelInput<T>> {
    let lidar = build_pseudo_image(clouds, poses, bev)?;
    let image = crop_image(camera, CropAnchor::Bottom)?;
    Ok(ModelInput {
        lidar: lidar.to_chw(),
        image: image.to_chw(),
        goal,
    })
}

/// Compact preprocessed training sample: capped LiDAR counts and cropped
/// camera bytes, expanded to tensors on demand.
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    lidar: Vec<u8>,
    cap: u32,
    image: Vec<u8>,
    pub labels: FrameLabels,
}

impl Sample {
    pub fn from_raw(name: String, raw: &RawFrame, bev: &BevConfig) -> Result<Self> {
        let p: LidarPseudoImage = build_pseudo_image(&raw.clouds, &raw.poses, bev)?;
        let cap = bev.count_cap.clamp(1, 255);
        let img: CameraImage = crop_image(&raw.camera, CropAnchor::Bottom)?;
        Ok(Sample {
            name,
            lidar: p.counts.iter().map(|&c| c.min(cap) as u8).collect(),
            cap,
            image: img.values.iter().map(|&v| (v * 255.0).round() as u8).collect(),
            labels: raw.labels.clone(),
        })
    }

    pub fn input<T: Element>(&self) -> ModelInput<T> {
        let n = BEV_SIZE * BEV_SIZE;
        let ch = LIDAR_FRAMES + 1;
        let mut lidar = vec![T::zero(); n * ch];
        for (i, &c) in self.lidar.iter().enumerate() {
            let v = c as f32 / self.cap as f32;
            lidar[(i % ch) * n + i / ch] = T::of(v as f64);
        }
        let m = CAMERA_SIZE * CAMERA_SIZE;
        let mut image = vec![T::zero(); m * 3];
        for (i, &b) in self.image.iter().enumerate() {
            let v = b as f32 / 255.0;
            image[(i % 3) * m + i / 3] = T::of(v as f64);
        }
        ModelInput {
            lidar: Tensor::new(&[ch, BEV_SIZE, BEV_SIZE], lidar).expect("extents"),
            image: Tensor::new(&[3, CAMERA_SIZE, CAMERA_SIZE], image).expect("extents"),
            goal: self.labels.goal,
        }
    }

    pub fn targets(&self, r: usize) -> Result<Targets> {
        self.labels.targets(r)
    }
}

/// Loads every `frame_*` directory in name order. Frames that fail to load
/// are returned separately with their error.
pub fn load_dataset(dir: &Path, bev: &BevConfig) -> Result<(Vec<Sample>, Vec<(PathBuf, Error)>)> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("frame_")))
        .collect();
    dirs.sort();
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for d in dirs {
        let name = d.file_name().unwrap().to_string_lossy().into_owned();
        match read_frame(&d).and_then(|raw| Sample::from_raw(name, &raw, bev)) {
            Ok(s) => samples.push(s),
            Err(e) => skipped.push((d, e)),
        }
    }
    Ok((samples, skipped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Difficulty of scenario i is `difficulties[i % len]`.
    pub difficulties: Vec<u32>,
    pub frames_per_route: usize,
    /// Keep every n-th model step.
    pub stride: usize,
    /// Every n-th route is a lead-vehicle route instead, cycling through the
    /// weather classes; 0 disables.
    pub lead_every: usize,
    /// Cycle the weather of generated routes too, instead of drawing it.
    pub balance_weather: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            difficulties: vec![0, 1, 2],
            frames_per_route: 40,
            stride: 1,
            lead_every: 0,
            balance_weather: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub dir: String,
    pub weather: Weather,
    pub scenario_seed: u64,
    pub difficulty: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn weather_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for e in &self.entries {
            c[e.weather.index()] += 1;
        }
        c
    }

    pub fn serialize(&self) -> String {
        use std::fmt::Write;
        let mut o = String::from("manifest v1\n");
        let _ = writeln!(o, "seed {}", self.seed);
        let _ = writeln!(o, "frames {}", self.entries.len());
        for (w, n) in Weather::ALL.iter().zip(self.weather_counts()) {
            let _ = writeln!(o, "weather {} {n}", w.name());
        }
        for e in &self.entries {
            let _ = writeln!(o, "frame {} {} {} {}", e.dir, e.weather.name(), e.scenario_seed, e.difficulty);
        }
        o.push_str("end\n");
        o
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let err = |n: usize, m: String| Error::parse("manifest", format!("line {n}: {m}"));
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, l)| l) != Some("manifest v1") {
            return Err(err(1, "expected header `manifest v1`".into()));
        }
        let mut seed = None;
        let mut frames = None;
        let mut counts = [None; 4];
        let mut entries = Vec::new();
        let mut ended = false;
        for (i, line) in lines {
            let n = i + 1;
            if ended {
                return Err(err(n, "content after `end`".into()));
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let int = |t: &str| t.parse::<u64>().map_err(|_| err(n, format!("bad integer `{t}`")));
            match f.as_slice() {
                ["seed", v] => seed = Some(int(v)?),
                ["frames", v] => frames = Some(int(v)? as usize),
                ["weather", w, c] => {
                    let w = Weather::parse(w).ok_or_else(|| err(n, format!("unknown weather `{w}`")))?;
                    counts[w.index()] = Some(int(c)? as usize);
                }
                ["frame", d, w, s, diff] => entries.push(ManifestEntry {
                    dir: d.to_string(),
                    weather: Weather::parse(w).ok_or_else(|| err(n, format!("unknown weather `{w}`")))?,
                    scenario_seed: int(s)?,
                    difficulty: u32::try_from(int(diff)?).map_err(|_| err(n, "difficulty too large".into()))?,
                }),
                ["end"] => ended = true,
                _ => return Err(err(n, format!("unrecognized line `{line}`"))),
            }
        }
        if !ended {
            return Err(Error::parse("manifest", "missing `end`"));
        }
        let m = Manifest {
            seed: seed.ok_or_else(|| Error::parse("manifest", "missing `seed`"))?,
            entries,
        };
        if frames != Some(m.entries.len()) {
            return Err(Error::parse("manifest", "frame count does not match the frame list"));
        }
        if counts.map(|c| c.unwrap_or(usize::MAX)) != m.weather_counts() {
            return Err(Error::parse("manifest", "weather counts do not match the frame list"));
        }
        Ok(m)
    }
}

/// Per-scenario seed derived from the dataset seed.
pub fn scenario_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64).rotate_left(17)
}

/// Drives the expert through generated scenarios and hands every kept
/// frame to `sink` together with its scenario, stopping after `frames`.
pub fn for_each_frame(
    frames: usize,
    seed: u64,
    data: &DataConfig,
    sim: &SimConfig,
    sink: &mut dyn FnMut(&Scenario, SensorFrame) -> Result<()>,
) -> Result<()> {
    if data.difficulties.is_empty() {
        return Err(contract_err!("data.difficulties is empty"));
    }
    let mut kept = 0;
    let mut route = 0usize;
    let (mut leads, mut generated) = (0usize, 0usize);
    while kept < frames {
        let sseed = scenario_seed(seed, route);
        let sc = if data.lead_every > 0 && route % data.lead_every == data.lead_every - 1 {
            leads += 1;
            lead_vehicle_scenario(sseed, Weather::ALL[(leads - 1) % Weather::ALL.len()])
        } else {
            generated += 1;
            let sc = generate_scenario(sseed, data.difficulties[route % data.difficulties.len()]);
            if data.balance_weather {
                sc.with_weather(Weather::ALL[(generated - 1) % Weather::ALL.len()])
            } else {
                sc
            }
        };
        route += 1;
        let mut ep = Episode::new(&sc, sim, f64::INFINITY)?;
        let mut expert = Expert::new(sim.expert, &ep.world);
        let mut taken = 0;
        let mut step = 0usize;
        while !ep.finished() && taken < data.frames_per_route && kept < frames {
            expert.update(&ep.world, sim.model_period);
            if step % data.stride.max(1) == 0 {
                sink(&sc, synth_sensors(&ep.world, &expert)?)?;
                kept += 1;
                taken += 1;
            }
            let wp = expert.plan(&ep.world);
            ep.advance(&wp);
            step += 1;
        }
    }
    Ok(())
}

/// Writes `frames` frame directories and the manifest under `out`.
pub fn generate_dataset(out: &Path, frames: usize, seed: u64, data: &DataConfig, sim: &SimConfig) -> Result<Manifest> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut entries = Vec::with_capacity(frames);
    for_each_frame(frames, seed, data, sim, &mut |sc, frame| {
        let name = format!("frame_{:06}", entries.len());
        write_frame(&out.join(&name), &frame)?;
        entries.push(ManifestEntry {
            dir: name,
            weather: sc.weather,
            scenario_seed: sc.seed,
            difficulty: sc.difficulty,
        });
        Ok(())
    })?;
    let m = Manifest { seed, entries };
    write(&out.join("manifest.txt"), m.serialize().as_bytes())?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lidar_bin_round_trip() {
        let pc = PointCloud::new(vec![[1.5, -2.25, 0.125], [0.0, 3.0, 1.0]], 0);
        let back = decode_lidar_bin(&encode_lidar_bin(&pc), 0).unwrap();
        assert_eq!(back, pc);
        assert!(decode_lidar_bin(&[0; 13], 0).is_err());
    }

    #[test]
    fn pose_text() {
        let p = EgoPose::new(1.0, -2.5, 0.25);
        assert_eq!(parse_pose(&format_pose(&p)).unwrap(), p);
        assert!(parse_pose("1 2").is_err());
        assert!(parse_pose("1 2 nan").is_err());
    }

    #[test]
    fn frame_file_names() {
        let f = frame_files();
        assert!(f.contains(&"lidar_t-2.bin".to_string()));
        assert!(f.contains(&"pose_t0.txt".to_string()));
    }
}
