//! OSM building footprints and the tag-to-function mapping.
//!
//! A building's `building`, `amenity` and `shop` tags are each looked up in a
//! [`TagMappingTable`]. The building gets a class only when every mapped tag
//! agrees on it; any disagreement leaves it unlabeled.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geometry::{ring_is_simple, GeoPoint, Vec2};
use crate::manifest::FunctionClass;

/// Mapping table shipped with the crate.
pub const DEFAULT_MAPPING: &str = include_str!("../data/osm_tag_mapping.txt");

/// The three tag keys that carry building function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TagKey {
    Building,
    Amenity,
    Shop,
}

impl TagKey {
    pub const ALL: [TagKey; 3] = [TagKey::Building, TagKey::Amenity, TagKey::Shop];

    pub fn as_str(self) -> &'static str {
        match self {
            TagKey::Building => "building",
            TagKey::Amenity => "amenity",
            TagKey::Shop => "shop",
        }
    }
}

impl fmt::Display for TagKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TagKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TagKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown tag key {s:?}")))
    }
}

/// One line of a mapping file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingEntry {
    pub key: TagKey,
    /// A tag value, or `*` for the key's fallback.
    pub value: String,
    /// `None` for values mapped explicitly to no class.
    pub class: Option<FunctionClass>,
}

/// Per-key value-to-class lookup.
#[derive(Debug, Clone, Default)]
pub struct TagMappingTable {
    entries: Vec<MappingEntry>,
    lookup: HashMap<(TagKey, String), Option<FunctionClass>>,
}

impl TagMappingTable {
    /// Parses `<key> <value> <class>` lines. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = TagMappingTable::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: String| Error::invalid(format!("mapping line {}: {m}", i + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [key, value, class] = fields[..] else {
                return Err(bad(format!("expected 3 fields, got {}", fields.len())));
            };
            let key: TagKey = key.parse().map_err(|e: Error| bad(e.to_string()))?;
            let class = match class {
                "none" => None,
                c => Some(c.parse::<FunctionClass>().map_err(|e| bad(e.to_string()))?),
            };
            if table.lookup.insert((key, value.to_owned()), class).is_some() {
                return Err(bad(format!("duplicate entry for {key}={value}")));
            }
            table.entries.push(MappingEntry {
                key,
                value: value.to_owned(),
                class,
            });
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn entries(&self) -> &[MappingEntry] {
        &self.entries
    }

    /// Class of one tag, falling back to the key's `*` entry.
    pub fn lookup(&self, key: TagKey, value: &str) -> Option<FunctionClass> {
        let value = value.trim();
        match self.lookup.get(&(key, value.to_owned())) {
            Some(class) => *class,
            None => self.lookup.get(&(key, "*".to_owned())).copied().flatten(),
        }
    }
}

/// The shipped table, parsed once.
pub fn default_table() -> &'static TagMappingTable {
    static TABLE: std::sync::OnceLock<TagMappingTable> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| TagMappingTable::parse(DEFAULT_MAPPING).expect("shipped mapping parses"))
}

/// Homogenized class of a building from its tags.
///
/// `None` when no tag maps to a class or when mapped tags disagree.
pub fn homogenize_label<I, K, V>(tags: I, table: &TagMappingTable) -> Option<FunctionClass>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut agreed: Option<FunctionClass> = None;
    let mut disagreement = false;
    for (k, v) in tags {
        let Ok(key) = k.as_ref().parse::<TagKey>() else {
            continue;
        };
        if let Some(class) = table.lookup(key, v.as_ref()) {
            match agreed {
                None => agreed = Some(class),
                Some(c) if c != class => disagreement = true,
                _ => {}
            }
        }
    }
    if disagreement {
        None
    } else {
        agreed
    }
}

/// One polygon: exterior ring and holes, each closed, vertices in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonRings {
    pub exterior: Vec<GeoPoint>,
    pub interiors: Vec<Vec<GeoPoint>>,
}

impl PolygonRings {
    pub fn rings(&self) -> impl Iterator<Item = &Vec<GeoPoint>> {
        std::iter::once(&self.exterior).chain(self.interiors.iter())
    }
}

/// A building outline with its raw tags.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingFootprint {
    pub building_id: String,
    /// Usually one polygon; multipolygon buildings keep every part.
    pub polygons: Vec<PolygonRings>,
    pub tags: BTreeMap<String, String>,
    pub mapped_class: Option<FunctionClass>,
}

impl BuildingFootprint {
    /// Bounding box as (min lon, min lat, max lon, max lat).
    pub fn bbox(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in self.polygons.iter().flat_map(|p| p.exterior.iter()) {
            b[0] = b[0].min(p.lon);
            b[1] = b[1].min(p.lat);
            b[2] = b[2].max(p.lon);
            b[3] = b[3].max(p.lat);
        }
        b
    }

    pub fn apply_mapping(&mut self, table: &TagMappingTable) {
        self.mapped_class = homogenize_label(&self.tags, table);
    }
}

/// Result of reading a feature file: valid footprints plus skip reasons.
#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub buildings: Vec<BuildingFootprint>,
    pub skipped: Vec<String>,
}

fn parse_ring(v: &Value) -> std::result::Result<Vec<GeoPoint>, String> {
    let coords = v.as_array().ok_or("ring is not an array")?;
    let mut ring = Vec::with_capacity(coords.len());
    for c in coords {
        let pair = c.as_array().filter(|a| a.len() >= 2).ok_or("bad coordinate")?;
        let lon = pair[0].as_f64().ok_or("non-numeric longitude")?;
        let lat = pair[1].as_f64().ok_or("non-numeric latitude")?;
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(format!("coordinate ({lon}, {lat}) outside WGS84 bounds"));
        }
        // drop repeated consecutive vertices
        if ring.last() != Some(&GeoPoint::new(lat, lon)) {
            ring.push(GeoPoint::new(lat, lon));
        }
    }
    let planar: Vec<Vec2> = ring.iter().map(|p| Vec2::new(p.lon, p.lat)).collect();
    if planar.len() < 4 || planar.first() != planar.last() {
        return Err("ring is not closed or has fewer than 4 vertices".into());
    }
    if !ring_is_simple(&planar) {
        return Err("ring self-intersects".into());
    }
    Ok(ring)
}

fn parse_polygon(v: &Value) -> std::result::Result<PolygonRings, String> {
    let rings = v.as_array().filter(|r| !r.is_empty()).ok_or("polygon has no rings")?;
    Ok(PolygonRings {
        exterior: parse_ring(&rings[0])?,
        interiors: rings[1..].iter().map(parse_ring).collect::<std::result::Result<_, _>>()?,
    })
}

fn value_to_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn parse_feature(f: &Value) -> std::result::Result<BuildingFootprint, String> {
    let props = f.get("properties").and_then(Value::as_object);
    let id = f
        .get("id")
        .and_then(value_to_string)
        .or_else(|| {
            let p = props?;
            ["@id", "osm_id", "id"]
                .iter()
                .find_map(|k| p.get(*k).and_then(value_to_string))
        })
        .ok_or("feature has no id")?;
    let geom = f.get("geometry").ok_or("feature has no geometry")?;
    let coords = geom.get("coordinates").ok_or("geometry has no coordinates")?;
    let polygons = match geom.get("type").and_then(Value::as_str) {
        Some("Polygon") => vec![parse_polygon(coords)?],
        Some("MultiPolygon") => coords
            .as_array()
            .filter(|a| !a.is_empty())
            .ok_or("empty multipolygon")?
            .iter()
            .map(parse_polygon)
            .collect::<std::result::Result<_, _>>()?,
        Some(t) => return Err(format!("{t} is not a polygon")),
        None => return Err("geometry has no type".into()),
    };
    let tags = props
        .map(|p| {
            p.iter()
                .filter(|(k, _)| k.as_str() != "mapped_class")
                .filter_map(|(k, v)| value_to_string(v).map(|s| (k.clone(), s)))
                .collect()
        })
        .unwrap_or_default();
    Ok(BuildingFootprint {
        building_id: id,
        polygons,
        tags,
        mapped_class: None,
    })
}

/// Reads a GeoJSON feature collection of building polygons and maps their tags.
///
/// Invalid features are skipped and reported, never fatal.
pub fn parse_buildings(text: &str, table: &TagMappingTable) -> Result<IngestReport> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("feature file: {e}")))?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::invalid("feature file has no \"features\" array"))?;
    let mut report = IngestReport::default();
    let mut seen = std::collections::HashSet::new();
    for (i, f) in features.iter().enumerate() {
        match parse_feature(f) {
            Ok(mut b) => {
                if !seen.insert(b.building_id.clone()) {
                    report
                        .skipped
                        .push(format!("feature {i} ({}): duplicate id", b.building_id));
                    continue;
                }
                b.apply_mapping(table);
                report.buildings.push(b);
            }
            Err(reason) => report.skipped.push(format!("feature {i}: {reason}")),
        }
    }
    for s in &report.skipped {
        log::warn!("skipped {s}");
    }
    Ok(report)
}

pub fn ingest_buildings(path: &Path, table: &TagMappingTable) -> Result<IngestReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_buildings(&text, table)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn ring_json(ring: &[GeoPoint]) -> Value {
    Value::Array(ring.iter().map(|p| json!([p.lon, p.lat])).collect())
}

/// GeoJSON feature collection with `mapped_class` added to each building's properties.
pub fn buildings_to_geojson(buildings: &[BuildingFootprint]) -> Value {
    let features: Vec<Value> = buildings
        .iter()
        .map(|b| {
            let mut props: Map<String, Value> = b
                .tags
                .iter()
                .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                .collect();
            props.insert(
                "mapped_class".into(),
                b.mapped_class.map_or(Value::Null, |c| Value::String(c.to_string())),
            );
            let polys: Vec<Value> = b
                .polygons
                .iter()
                .map(|p| Value::Array(p.rings().map(|r| ring_json(r)).collect()))
                .collect();
            let geometry = if polys.len() == 1 {
                json!({"type": "Polygon", "coordinates": polys[0]})
            } else {
                json!({"type": "MultiPolygon", "coordinates": polys})
            };
            json!({"type": "Feature", "id": b.building_id, "properties": props, "geometry": geometry})
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn write_buildings(buildings: &[BuildingFootprint], path: &Path) -> Result<()> {
    let text = serde_json::to_string(&buildings_to_geojson(buildings)).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tags(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn label(pairs: &[(&str, &str)]) -> Option<FunctionClass> {
        homogenize_label(tags(pairs), default_table())
    }

    #[test]
    fn shipped_table_parses() {
        assert!(default_table().entries().len() > 100);
    }

    #[test]
    fn single_tag_examples() {
        assert_eq!(label(&[("building", "apartments")]), Some(FunctionClass::Residential));
        assert_eq!(label(&[("building", "yes")]), None);
        assert_eq!(label(&[("building", "spaceport")]), None);
        assert_eq!(label(&[("shop", "bakery")]), Some(FunctionClass::Commercial));
        assert_eq!(label(&[("shop", "vacant")]), None);
        assert_eq!(label(&[("name", "Town Hall")]), None);
    }

    #[test]
    fn agreement_and_disagreement() {
        assert_eq!(
            label(&[("building", "retail"), ("shop", "supermarket")]),
            Some(FunctionClass::Commercial)
        );
        assert_eq!(label(&[("building", "retail"), ("amenity", "place_of_worship")]), None);
        // an unmapped value does not void an agreement
        assert_eq!(
            label(&[("building", "yes"), ("amenity", "school")]),
            Some(FunctionClass::Other)
        );
    }

    #[test]
    fn every_entry_round_trips_alone() {
        let t = default_table();
        for e in t.entries() {
            let value = if e.value == "*" { "some_unlisted_value" } else { e.value.as_str() };
            assert_eq!(
                homogenize_label([(e.key.as_str(), value)], t),
                e.class,
                "{}={}",
                e.key,
                e.value
            );
        }
    }

    #[test]
    fn parse_errors() {
        assert!(TagMappingTable::parse("building house").is_err());
        assert!(TagMappingTable::parse("roof house residential").is_err());
        assert!(TagMappingTable::parse("building house mansion").is_err());
        assert!(TagMappingTable::parse("building house residential\nbuilding house other").is_err());
        let t = TagMappingTable::parse("# c\n\nbuilding house residential # trailing\n").unwrap();
        assert_eq!(t.lookup(TagKey::Building, "house"), Some(FunctionClass::Residential));
    }

    proptest! {
        #[test]
        fn order_independent(perm in Just(vec![0usize, 1, 2]).prop_shuffle(), a in 0usize..50, b in 0usize..50, c in 0usize..50) {
            let t = default_table();
            let pick = |key: TagKey, i: usize| {
                let vals: Vec<_> = t.entries().iter().filter(|e| e.key == key).collect();
                (key.as_str().to_string(), vals[i % vals.len()].value.clone())
            };
            let all = [pick(TagKey::Building, a), pick(TagKey::Amenity, b), pick(TagKey::Shop, c)];
            let shuffled: Vec<_> = perm.iter().map(|&i| all[i].clone()).collect();
            prop_assert_eq!(homogenize_label(all.clone(), t), homogenize_label(shuffled, t));
        }

        #[test]
        fn agreeing_tag_is_idempotent_and_disagreeing_voids(i in 0usize..500, j in 0usize..500) {
            let t = default_table();
            let mapped: Vec<_> = t.entries().iter().filter(|e| e.class.is_some() && e.value != "*").collect();
            let first = mapped[i % mapped.len()];
            let second = mapped[j % mapped.len()];
            prop_assume!(first.key != second.key);
            let base = homogenize_label([(first.key.as_str(), first.value.as_str())], t);
            let both = homogenize_label(
                [(first.key.as_str(), first.value.as_str()), (second.key.as_str(), second.value.as_str())],
                t,
            );
            if first.class == second.class {
                prop_assert_eq!(both, base);
            } else {
                prop_assert_eq!(both, None);
            }
        }
    }

    const SQUARE: &str = r#"{"type":"FeatureCollection","features":[
        {"type":"Feature","id":"way/1","properties":{"building":"apartments","levels":4},
         "geometry":{"type":"Polygon","coordinates":[[[11.0,48.0],[11.001,48.0],[11.001,48.001],[11.0,48.001],[11.0,48.0]]]}}
    ]}"#;

    #[test]
    fn ingest_single_square() {
        let r = parse_buildings(SQUARE, default_table()).unwrap();
        assert!(r.skipped.is_empty());
        assert_eq!(r.buildings.len(), 1);
        let b = &r.buildings[0];
        assert_eq!(b.building_id, "way/1");
        assert_eq!(b.mapped_class, Some(FunctionClass::Residential));
        assert_eq!(b.tags["levels"], "4");
        assert_eq!(b.bbox(), [11.0, 48.0, 11.001, 48.001]);
    }

    #[test]
    fn ingest_skips_invalid_features() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","id":"open","properties":{},
             "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1]]]}},
            {"type":"Feature","id":"bowtie","properties":{},
             "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,1],[1,0],[0,1],[0,0]]]}},
            {"type":"Feature","id":"pt","properties":{},"geometry":{"type":"Point","coordinates":[0,0]}},
            {"type":"Feature","properties":{"osm_id":77},
             "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,0]]]}},
            {"type":"Feature","properties":{"osm_id":77},
             "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,0]]]}}
        ]}"#;
        let r = parse_buildings(text, default_table()).unwrap();
        assert_eq!(r.buildings.len(), 1);
        assert_eq!(r.buildings[0].building_id, "77");
        assert_eq!(r.skipped.len(), 4);
    }

    #[test]
    fn many_footprints_unique_ids() {
        let features: Vec<Value> = (0..5000)
            .map(|i| {
                let x = 11.0 + (i % 100) as f64 * 1e-3;
                let y = 48.0 + (i / 100) as f64 * 1e-3;
                let s = 5e-4;
                json!({"type":"Feature","id": format!("way/{i}"),
                       "properties": {"building": if i % 2 == 0 { "house" } else { "retail" }},
                       "geometry": {"type":"Polygon","coordinates":[[[x,y],[x+s,y],[x+s,y+s],[x,y+s],[x,y]]]}})
            })
            .collect();
        let text = json!({"type":"FeatureCollection","features":features}).to_string();
        let r = parse_buildings(&text, default_table()).unwrap();
        assert_eq!(r.buildings.len(), 5000);
        let ids: std::collections::HashSet<_> = r.buildings.iter().map(|b| &b.building_id).collect();
        assert_eq!(ids.len(), 5000);
    }

    #[test]
    fn geojson_round_trip() {
        let r = parse_buildings(SQUARE, default_table()).unwrap();
        let text = buildings_to_geojson(&r.buildings).to_string();
        let back = parse_buildings(&text, default_table()).unwrap();
        assert_eq!(back.buildings, r.buildings);
    }
}
