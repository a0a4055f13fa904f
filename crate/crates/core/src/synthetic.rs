//! A small hand-designed scene for the examples and tests.
//!
//! Fifty images near Munich whose inputs are chosen so that, at the default
//! thresholds, 30 pass similarity, 20 detection, 14 unique-location,
//! 9 direction, 6 sightline and 4 end up labeled.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use crate::detfilter::{write_detections, DetectionLine, DetectionTable};
use crate::embedding::{write_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::{write_predictions, PredictionVector};
use crate::exif::DirectionRef;
use crate::geometry::{unproject_local, GeoPoint, Vec2};
use crate::manifest::{write_manifest, FunctionClass, ImageRecord};
use crate::osm::{default_table, write_buildings, BuildingFootprint, PolygonRings};
use crate::sightline::BuildingIndex;

pub const SCENE_SIZE: usize = 50;
/// Survivors after input and each of the six stages at default thresholds.
pub const EXPECTED_FUNNEL: [usize; 7] = [50, 30, 20, 14, 9, 6, 4];
pub const EMBEDDING_DIM: usize = 8;
pub const MODELS: [&str; 2] = ["model-a", "model-b"];

const ORIGIN: GeoPoint = GeoPoint {
    lat: 48.137,
    lon: 11.575,
};

/// Little-endian TIFF with a GPS IFD holding `GPSImgDirectionRef` and/or
/// `GPSImgDirection` (as the rational `num/den`).
pub fn gps_tiff(direction: Option<(u32, u32)>, reference: Option<DirectionRef>) -> Vec<u8> {
    let mut fields: Vec<(u16, u16, u32, Vec<u8>)> = Vec::new();
    if let Some(r) = reference {
        let letter = match r {
            DirectionRef::TrueNorth => b'T',
            DirectionRef::MagneticNorth => b'M',
        };
        fields.push((0x10, 2, 2, vec![letter, 0]));
    }
    if let Some((n, d)) = direction {
        fields.push((0x11, 5, 1, [n.to_le_bytes(), d.to_le_bytes()].concat()));
    }
    let gps_at: u32 = 26;
    let mut data_at = gps_at + 2 + 12 * fields.len() as u32 + 4;
    let mut b = Vec::new();
    b.extend_from_slice(b"II*\0");
    b.extend_from_slice(&8u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&0x8825u16.to_le_bytes());
    b.extend_from_slice(&4u16.to_le_bytes());
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&gps_at.to_le_bytes());
    b.extend_from_slice(&0u32.to_le_bytes());
    b.extend_from_slice(&(fields.len() as u16).to_le_bytes());
    let mut data = Vec::new();
    for (tag, ty, count, value) in &fields {
        b.extend_from_slice(&tag.to_le_bytes());
        b.extend_from_slice(&ty.to_le_bytes());
        b.extend_from_slice(&count.to_le_bytes());
        if value.len() <= 4 {
            let mut inline = [0u8; 4];
            inline[..value.len()].copy_from_slice(value);
            b.extend_from_slice(&inline);
        } else {
            b.extend_from_slice(&data_at.to_le_bytes());
            data_at += value.len() as u32;
            data.extend_from_slice(value);
        }
    }
    b.extend_from_slice(&0u32.to_le_bytes());
    b.extend_from_slice(&data);
    b
}

/// TIFF whose only IFD is empty.
pub fn tiff_without_gps() -> Vec<u8> {
    let mut b = b"II*\0".to_vec();
    b.extend_from_slice(&8u32.to_le_bytes());
    b.extend_from_slice(&[0, 0, 0, 0, 0, 0]);
    b
}

/// Axis-aligned rectangle given in meters around `center`.
pub fn rectangle(id: &str, center: GeoPoint, x0: f64, y0: f64, x1: f64, y1: f64, tags: &[(&str, &str)]) -> BuildingFootprint {
    let corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)];
    let mut b = BuildingFootprint {
        building_id: id.into(),
        polygons: vec![PolygonRings {
            exterior: corners
                .iter()
                .map(|&(x, y)| unproject_local(center, Vec2::new(x, y)))
                .collect(),
            interiors: vec![],
        }],
        tags: tags
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect::<BTreeMap<_, _>>(),
        mapped_class: None,
    };
    b.apply_mapping(default_table());
    b
}

/// All inputs of the scene, in memory.
#[derive(Debug, Clone)]
pub struct Scene {
    pub records: Vec<ImageRecord>,
    pub candidates: EmbeddingMatrix,
    pub seeds: EmbeddingMatrix,
    pub detections: Vec<DetectionLine>,
    pub exif: HashMap<String, Vec<u8>>,
    pub buildings: Vec<BuildingFootprint>,
    pub predictions: Vec<PredictionVector>,
}

/// File locations written by [`Scene::write_to_dir`].
#[derive(Debug, Clone)]
pub struct ScenePaths {
    pub manifest: PathBuf,
    pub candidates: PathBuf,
    pub seeds: PathBuf,
    pub detections: PathBuf,
    pub exif_dir: PathBuf,
    pub buildings: PathBuf,
    pub predictions: PathBuf,
}

pub fn image_id(i: usize) -> String {
    format!("img-{i:02}")
}

fn camera(i: usize) -> GeoPoint {
    GeoPoint::new(ORIGIN.lat, ORIGIN.lon + i as f64 * 0.02)
}

fn unit_with_similarity(c: f32) -> Vec<f32> {
    // seeds span the first two axes; the last axis is orthogonal to both
    let mut v = vec![0.0f32; EMBEDDING_DIM];
    v[0] = c;
    v[EMBEDDING_DIM - 1] = (1.0 - c * c).max(0.0).sqrt();
    v
}

fn boxed(id: &str, class: &str, score: f64, side: f64) -> DetectionLine {
    DetectionLine {
        image_id: id.into(),
        class_name: class.into(),
        score,
        x0: 0.0,
        y0: 0.0,
        x1: side,
        y1: side,
    }
}

impl Scene {
    pub fn new() -> Self {
        let ids: Vec<String> = (0..SCENE_SIZE).map(image_id).collect();

        // sim-failing images 30 and 31 share coordinates with 0 and 1; the
        // pairs 14/15, 16/17, 18/19 share coordinates among themselves
        let mut records: Vec<ImageRecord> = (0..SCENE_SIZE)
            .map(|i| {
                let at = match i {
                    15 | 17 | 19 => camera(i - 1),
                    30 | 31 => camera(i - 30),
                    _ => camera(i),
                };
                ImageRecord::new(ids[i].clone(), at.lat, at.lon)
            })
            .collect();
        records[3].extra.insert("source".into(), "flickr".into());

        let candidates = EmbeddingMatrix::from_rows((0..SCENE_SIZE).map(|i| {
            let c = if i < 30 {
                0.72 + 0.008 * i as f32
            } else {
                0.10 + 0.025 * (i - 30) as f32
            };
            (ids[i].clone(), unit_with_similarity(c))
        }))
        .expect("valid rows");
        let mut s0 = vec![0.0f32; EMBEDDING_DIM];
        s0[0] = 1.0;
        let mut s1 = vec![0.0f32; EMBEDDING_DIM];
        s1[1] = 2.0;
        let seeds = EmbeddingMatrix::from_rows([("seed-0", s0), ("seed-1", s1)]).expect("valid seeds");

        let mut detections = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            match i {
                0..=19 => {
                    detections.push(boxed(id, "building", 0.85, 0.7));
                    if i % 3 == 0 {
                        detections.push(boxed(id, "person", 0.95, 0.2));
                    }
                }
                20 => {}
                21 => detections.push(boxed(id, "car", 0.9, 0.8)),
                22 => detections.push(boxed(id, "building", 0.2, 0.7)),
                23 => detections.push(boxed(id, "house", 0.9, 0.3)),
                24 => {
                    // confident but small, large but unsure: no single box qualifies
                    detections.push(boxed(id, "building", 0.9, 0.3));
                    detections.push(boxed(id, "house", 0.2, 0.8));
                }
                25..=29 => detections.push(boxed(id, "house", 0.1 + 0.03 * (i - 25) as f64, 0.5)),
                _ if i % 2 == 0 => detections.push(boxed(id, "house", 0.9, 0.6)),
                _ => detections.push(boxed(id, "tree", 0.9, 0.6)),
            }
        }

        let mut exif = HashMap::new();
        let t = Some(DirectionRef::TrueNorth);
        let m = Some(DirectionRef::MagneticNorth);
        let dirs = [
            (Some((0, 1)), t),
            (Some((9000, 100)), t),
            (Some((180, 1)), t),
            (Some((270, 1)), m),
            (Some((36000, 100)), t),
            (Some((90, 1)), None),
            (Some((0, 1)), t),
            (Some((90, 1)), t),
            (Some((180, 1)), t),
        ];
        for (i, (d, r)) in dirs.iter().enumerate() {
            exif.insert(ids[i].clone(), gps_tiff(*d, *r));
        }
        // 9: no payload at all
        exif.insert(ids[10].clone(), tiff_without_gps());
        exif.insert(ids[11].clone(), gps_tiff(None, t));
        exif.insert(ids[12].clone(), gps_tiff(Some((45, 1)), t)[..30].to_vec());
        exif.insert(ids[13].clone(), vec![0xFF, 0xD8, 0xFF, 0xD9]);
        for id in &ids[14..20] {
            exif.insert(id.clone(), gps_tiff(Some((0, 1)), t));
        }

        let b = |i: usize, j: usize| format!("way/{}", 1000 + 10 * i + j);
        let buildings = vec![
            rectangle(&b(0, 0), camera(0), -5.0, 10.0, 5.0, 20.0, &[("building", "house")]),
            rectangle(&b(0, 1), camera(0), -5.0, 50.0, 5.0, 60.0, &[("building", "retail")]),
            rectangle(&b(1, 0), camera(1), 25.0, -5.0, 35.0, 5.0, &[("building", "retail")]),
            rectangle(&b(2, 0), camera(2), -5.0, -50.0, 5.0, -40.0, &[("building", "church")]),
            rectangle(&b(3, 0), camera(3), -70.0, -5.0, -60.0, 5.0, &[("building", "apartments")]),
            rectangle(&b(4, 0), camera(4), -5.0, 100.0, 5.0, 110.0, &[("building", "yes")]),
            rectangle(&b(5, 0), camera(5), 200.0, -5.0, 210.0, 5.0, &[("building", "house"), ("shop", "bakery")]),
            rectangle(&b(6, 0), camera(6), -5.0, -30.0, 5.0, -20.0, &[("building", "house")]),
            rectangle(&b(7, 0), camera(7), 300.0, -5.0, 310.0, 5.0, &[("building", "office")]),
            rectangle(&b(8, 0), camera(8), -5.0, -610.0, 5.0, -600.0, &[("building", "school")]),
        ];

        let mut predictions = Vec::new();
        for i in 0..20 {
            for (k, model) in MODELS.iter().enumerate() {
                let hot = match i {
                    0 | 3 => 2,
                    1 => 0,
                    2 => 2 - k,
                    _ => (i + k) % 3,
                };
                let mut probs = [0.15, 0.15, 0.15];
                probs[hot] = 0.7;
                predictions.push(PredictionVector {
                    image_id: ids[i].clone(),
                    model_id: (*model).into(),
                    probs,
                });
            }
        }

        Scene {
            records,
            candidates,
            seeds,
            detections,
            exif,
            buildings,
            predictions,
        }
    }

    pub fn detection_table(&self) -> DetectionTable {
        let mut table = DetectionTable::new();
        for l in &self.detections {
            table.entry(l.image_id.clone()).or_default().push(l.to_detection());
        }
        table
    }

    pub fn building_index(&self) -> BuildingIndex {
        BuildingIndex::new(self.buildings.clone())
    }

    /// Weak labels the default run assigns, by image id.
    pub fn expected_labels() -> Vec<(String, String, FunctionClass)> {
        vec![
            (image_id(0), "way/1000".into(), FunctionClass::Residential),
            (image_id(1), "way/1010".into(), FunctionClass::Commercial),
            (image_id(2), "way/1020".into(), FunctionClass::Other),
            (image_id(3), "way/1030".into(), FunctionClass::Residential),
        ]
    }

    /// Writes every input file into `dir`, EXIF payloads as `<id>.exif`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<ScenePaths> {
        let paths = ScenePaths {
            manifest: dir.join("manifest.jsonl"),
            candidates: dir.join("candidates.emb"),
            seeds: dir.join("seeds.emb"),
            detections: dir.join("detections.jsonl"),
            exif_dir: dir.join("exif"),
            buildings: dir.join("buildings.geojson"),
            predictions: dir.join("predictions.jsonl"),
        };
        write_manifest(&self.records, &paths.manifest)?;
        write_embeddings(&self.candidates, &paths.candidates)?;
        write_embeddings(&self.seeds, &paths.seeds)?;
        write_detections(&self.detections, &paths.detections)?;
        fs::create_dir_all(&paths.exif_dir).map_err(|e| Error::io(&paths.exif_dir, e))?;
        for (id, bytes) in &self.exif {
            let p = paths.exif_dir.join(format!("{id}.exif"));
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
        write_buildings(&self.buildings, &paths.buildings)?;
        write_predictions(&self.predictions, &paths.predictions)?;
        Ok(paths)
    }
}

impl Default for Scene {
    fn default() -> Self {
        Scene::new()
    }
}
