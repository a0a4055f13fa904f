//! Random scenes and reference implementations shared by integration tests.

#![allow(dead_code)]

use std::collections::HashMap;

use geosift::detfilter::DetectionLine;
use geosift::embedding::EmbeddingMatrix;
use geosift::exif::DirectionRef;
use geosift::geometry::{unproject_local, GeoPoint, Vec2};
use geosift::manifest::ImageRecord;
use geosift::osm::{default_table, BuildingFootprint, PolygonRings};
use geosift::synthetic::{gps_tiff, Scene};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const DIM: usize = 8;

const TAGS: [(&str, &str); 9] = [
    ("building", "house"),
    ("building", "retail"),
    ("building", "church"),
    ("building", "yes"),
    ("building", "apartments"),
    ("amenity", "restaurant"),
    ("amenity", "school"),
    ("shop", "bakery"),
    ("building", "office"),
];

fn unit(rng: &mut StdRng) -> Vec<f32> {
    (0..DIM).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

/// A random convex quadrilateral footprint (rotated rectangle) in meters
/// around `center`.
pub fn rotated_rect(
    id: &str,
    center: GeoPoint,
    c: Vec2,
    half: (f64, f64),
    angle: f64,
    tags: &[(&str, &str)],
) -> (BuildingFootprint, Vec<Vec2>) {
    let (s, co) = angle.sin_cos();
    let local: Vec<Vec2> = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0)]
        .iter()
        .map(|&(u, v)| {
            let (x, y) = (u * half.0, v * half.1);
            Vec2::new(c.x + x * co - y * s, c.y + x * s + y * co)
        })
        .collect();
    let mut b = BuildingFootprint {
        building_id: id.into(),
        polygons: vec![PolygonRings {
            exterior: local.iter().map(|p| unproject_local(center, *p)).collect(),
            interiors: vec![],
        }],
        tags: tags.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        mapped_class: None,
    };
    b.apply_mapping(default_table());
    (b, local)
}

/// `n` images with random parameters at every stage. A share `dup_rate` of
/// them reuses an earlier image's coordinates.
pub fn random_scene(seed: u64, n: usize, dup_rate: f64) -> Scene {
    let mut rng = StdRng::seed_from_u64(seed);
    let origin = GeoPoint::new(rng.gen_range(-60.0..60.0), rng.gen_range(-170.0..170.0));
    let cameras: Vec<GeoPoint> = (0..n)
        .map(|i| GeoPoint::new(origin.lat + (i / 40) as f64 * 0.02, origin.lon + (i % 40) as f64 * 0.02))
        .collect();
    let ids: Vec<String> = (0..n).map(|i| format!("r{seed}-{i:04}")).collect();

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let at = if i > 0 && rng.gen_bool(dup_rate) {
            let j = rng.gen_range(0..i);
            let r: &ImageRecord = &records[j];
            GeoPoint::new(r.lat, r.lon)
        } else {
            cameras[i]
        };
        records.push(ImageRecord::new(ids[i].clone(), at.lat, at.lon));
    }

    let seeds = EmbeddingMatrix::from_rows((0..3).map(|k| (format!("s{k}"), unit(&mut rng)))).unwrap();
    let candidates = EmbeddingMatrix::from_rows(ids.iter().map(|id| {
        let s = seeds.row(rng.gen_range(0..3)).to_vec();
        let noise = unit(&mut rng);
        let w = rng.gen_range(0.0f32..1.5);
        (id.clone(), s.iter().zip(noise).map(|(a, b)| a + w * b).collect::<Vec<f32>>())
    }))
    .unwrap();

    let classes = ["building", "house", "car", "Building"];
    let mut detections = Vec::new();
    for id in &ids {
        for _ in 0..rng.gen_range(0..4) {
            let w: f64 = rng.gen_range(0.05..1.0);
            let h: f64 = rng.gen_range(0.05..1.0);
            detections.push(DetectionLine {
                image_id: id.clone(),
                class_name: classes[rng.gen_range(0..classes.len())].into(),
                score: (rng.gen_range(0.0..1.0f64) * 100.0).round() / 100.0,
                x0: 0.0,
                y0: 0.0,
                x1: w,
                y1: h,
            });
        }
    }

    let mut exif = HashMap::new();
    for id in &ids {
        let roll: f64 = rng.gen();
        if roll < 0.7 {
            let deg = rng.gen_range(0..36000u32);
            let r = if rng.gen_bool(0.8) {
                Some(DirectionRef::TrueNorth)
            } else {
                Some(DirectionRef::MagneticNorth)
            };
            exif.insert(id.clone(), gps_tiff(Some((deg, 100)), r));
        } else if roll < 0.85 {
            exif.insert(id.clone(), gps_tiff(None, Some(DirectionRef::TrueNorth)));
        }
    }

    let mut buildings = Vec::new();
    for (i, cam) in cameras.iter().enumerate() {
        for j in 0..rng.gen_range(0..6) {
            let c = Vec2::new(rng.gen_range(-450.0..450.0), rng.gen_range(-450.0..450.0));
            let half = (rng.gen_range(3.0..30.0), rng.gen_range(3.0..30.0));
            let tag = TAGS[rng.gen_range(0..TAGS.len())];
            let (b, _) = rotated_rect(&format!("w{i}-{j}"), *cam, c, half, rng.gen_range(0.0..3.2), &[tag]);
            buildings.push(b);
        }
    }

    Scene {
        records,
        candidates,
        seeds,
        detections,
        exif,
        buildings,
        predictions: Vec::new(),
    }
}

/// Entry parameter of the segment `0 -> end` into a convex polygon
/// (closed ring, any orientation), by Cyrus-Beck clipping.
pub fn cyrus_beck(end: Vec2, ring: &[Vec2]) -> Option<f64> {
    let area2: f64 = ring.windows(2).map(|w| w[0].x * w[1].y - w[1].x * w[0].y).sum();
    let (mut t_in, mut t_out) = (0.0f64, 1.0f64);
    for w in ring.windows(2) {
        let e = Vec2::new(w[1].x - w[0].x, w[1].y - w[0].y);
        // outward normal
        let n = if area2 > 0.0 { Vec2::new(e.y, -e.x) } else { Vec2::new(-e.y, e.x) };
        let num = n.x * (0.0 - w[0].x) + n.y * (0.0 - w[0].y);
        let den = n.x * end.x + n.y * end.y;
        if den == 0.0 {
            if num > 0.0 {
                return None;
            }
            continue;
        }
        let t = -num / den;
        if den < 0.0 {
            t_in = t_in.max(t);
        } else {
            t_out = t_out.min(t);
        }
        if t_in > t_out {
            return None;
        }
    }
    Some(t_in)
}
