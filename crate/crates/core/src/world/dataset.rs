//! Clip records and their on-disk container.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::{Container, ContainerWriter};
use crate::error::{Error, Result};
use crate::frames::FrameArithmetic;
use crate::latent::{LatentVideo, C_LAT};
use crate::seed;
use crate::world::actor::{simulate_actor, ActorSpec, CameraKind, CameraTrajectory};
use crate::world::audio::{gen_audio, AudioTrack, D_AUDIO};

pub const DATASET_KIND: &str = "dub-engine/dataset";

/// One (audio, ground-truth latent) pair and the world parameters that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub seed: u64,
    pub audio: AudioTrack,
    pub video: LatentVideo,
    pub actor: Option<ActorSpec>,
    pub camera: Option<CameraTrajectory>,
}

impl Clip {
    pub fn pixel_len(&self) -> usize {
        self.audio.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RecordMeta {
    seed: u64,
    pixel_frames: usize,
    latent_frames: usize,
    actor: Option<ActorSpec>,
    camera_kind: Option<CameraKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub clips: usize,
    pub pixel_frames: usize,
    pub latent_frames: usize,
    pub bytes: usize,
}

/// Generate one ground-truth clip.
pub fn generate_clip(clip_len: usize, clip_seed: u64, camera: CameraKind) -> Result<Clip> {
    let audio = gen_audio(clip_len, seed::derive(clip_seed, "audio", 0))?;
    let actor = ActorSpec::random(seed::derive(clip_seed, "actor", 0));
    let cam = CameraTrajectory::generate(camera, clip_len, seed::derive(clip_seed, "camera", 0))?;
    let video = simulate_actor(&audio, &actor, &cam, seed::derive(clip_seed, "motion", 0))?;
    Ok(Clip {
        seed: clip_seed,
        audio,
        video,
        actor: Some(actor),
        camera: Some(cam),
    })
}

/// `n_clips` clips with per-clip seeds derived from `seed`; camera kinds cycle.
pub fn generate_clips(n_clips: usize, clip_len: usize, seed: u64) -> Result<Vec<Clip>> {
    let arith = FrameArithmetic::default();
    arith.pixel_to_latent(clip_len)?;
    if clip_len < 2 * arith.chunk_pixel_len {
        return Err(Error::TooShort {
            got: clip_len,
            need: 2 * arith.chunk_pixel_len,
        });
    }
    (0..n_clips)
        .map(|i| {
            let kind = CameraKind::ALL[i % CameraKind::ALL.len()];
            generate_clip(clip_len, seed::derive(seed, "clip", i as u64), kind)
        })
        .collect()
}

pub fn encode_clips(clips: &[Clip], seed: u64, extra: serde_json::Value) -> Result<Vec<u8>> {
    let mut w = ContainerWriter::new();
    let mut records = Vec::with_capacity(clips.len());
    for (i, c) in clips.iter().enumerate() {
        w.add(format!("clip{i}.audio_features"), c.audio.features());
        w.add_raw(format!("clip{i}.envelope"), [c.audio.len(), 1], c.audio.envelope());
        w.add(format!("clip{i}.latent"), c.video.frames());
        if let Some(cam) = &c.camera {
            w.add(format!("clip{i}.camera"), cam.offsets());
        }
        records.push(RecordMeta {
            seed: c.seed,
            pixel_frames: c.audio.len(),
            latent_frames: c.video.latent_len(),
            actor: c.actor.clone(),
            camera_kind: c.camera.as_ref().map(|k| k.kind),
        });
    }
    let meta = json!({
        "seed": seed,
        "counts": { "clips": clips.len() },
        "dims": { "c_lat": C_LAT, "d_audio": D_AUDIO },
        "records": records,
        "extra": extra,
    });
    w.to_bytes(DATASET_KIND, meta)
}

pub fn write_clips(path: &Path, clips: &[Clip], seed: u64, extra: serde_json::Value) -> Result<usize> {
    let bytes = encode_clips(clips, seed, extra)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len())
}

/// Generate and write a dataset file.
pub fn make_dataset(n_clips: usize, clip_len: usize, seed: u64, out_path: &Path) -> Result<DatasetSummary> {
    let clips = generate_clips(n_clips, clip_len, seed)?;
    let bytes = write_clips(out_path, &clips, seed, serde_json::Value::Null)?;
    Ok(DatasetSummary {
        clips: clips.len(),
        pixel_frames: clips.iter().map(Clip::pixel_len).sum(),
        latent_frames: clips.iter().map(|c| c.video.latent_len()).sum(),
        bytes,
    })
}

pub fn load_clips(path: &Path) -> Result<Vec<Clip>> {
    let mut c = Container::read(path)?;
    c.expect_kind(DATASET_KIND)?;
    let records: Vec<RecordMeta> = serde_json::from_value(c.header.meta["records"].clone())?;
    let mut clips = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        let features = c.take_block(&format!("clip{i}.audio_features"))?;
        let envelope = c.take_block(&format!("clip{i}.envelope"))?.into_data();
        let audio = AudioTrack::new(features, envelope)?;
        let video = LatentVideo::new(c.take_block(&format!("clip{i}.latent"))?)?;
        let camera = match r.camera_kind {
            Some(kind) => Some(CameraTrajectory::new(
                c.take_block(&format!("clip{i}.camera"))?,
                kind,
            )?),
            None => None,
        };
        if audio.len() != r.pixel_frames || video.latent_len() != r.latent_frames {
            return Err(Error::Format(format!("record {i} lengths disagree with header")));
        }
        clips.push(Clip {
            seed: r.seed,
            audio,
            video,
            actor: r.actor,
            camera,
        });
    }
    Ok(clips)
}
