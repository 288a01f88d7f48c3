use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sampling::DATASET_SPP;
use crate::error::{Error, IoContext, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GROUND_TRUTH_SPP: u32 = 4000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split \"{other}\""))),
        }
    }
}

/// One rendered view of a scene.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene_id: String,
    pub view_id: String,
    pub split: Split,
    /// `(width, height)` of the full-resolution render.
    pub resolution: (usize, usize),
    /// Directory of layer files per spp, relative to the dataset root.
    pub spp_to_path: BTreeMap<u32, String>,
}

impl ManifestEntry {
    /// Entry whose layer directories follow `<scene>/<view>/<spp>`.
    pub fn with_default_paths(
        scene_id: &str,
        view_id: &str,
        split: Split,
        resolution: (usize, usize),
        spps: &[u32],
    ) -> Self {
        Self {
            scene_id: scene_id.to_string(),
            view_id: view_id.to_string(),
            split,
            resolution,
            spp_to_path: spps.iter().map(|&s| (s, format!("{scene_id}/{view_id}/{s}"))).collect(),
        }
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.scene_id, self.view_id)
    }

    pub fn spp_dir(&self, root: &Path, spp: u32) -> Result<PathBuf> {
        self.spp_to_path
            .get(&spp)
            .map(|p| root.join(p))
            .ok_or_else(|| Error::Data(format!("{} has no {spp} spp render", self.label())))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Checks spp keys and that no scene appears in two splits.
    pub fn validate(&self) -> Result<()> {
        let mut scene_split: BTreeMap<&str, Split> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if let Some(bad) = e.spp_to_path.keys().find(|s| !DATASET_SPP.contains(s)) {
                return Err(Error::Data(format!("{}: spp {bad} is not a dataset spp level", e.label())));
            }
            if let Some(prev) = scene_split.insert(&e.scene_id, e.split) {
                if prev != e.split {
                    return Err(Error::Data(format!(
                        "scene \"{}\" appears in both {prev} and {} splits",
                        e.scene_id, e.split
                    )));
                }
            }
            if !seen.insert((&e.scene_id, &e.view_id)) {
                return Err(Error::Data(format!("duplicate entry {}", e.label())));
            }
        }
        Ok(())
    }

    /// Adds an entry, rejecting it if that would break split disjointness.
    pub fn add_entry(&mut self, entry: ManifestEntry) -> Result<()> {
        self.entries.push(entry);
        if let Err(e) = self.validate() {
            self.entries.pop();
            return Err(e);
        }
        Ok(())
    }

    /// Moves every view of `scene_id` into `split`.
    pub fn move_scene(&mut self, scene_id: &str, split: Split) -> Result<usize> {
        let mut moved = 0;
        for e in self.entries.iter_mut().filter(|e| e.scene_id == scene_id) {
            e.split = split;
            moved += 1;
        }
        if moved == 0 {
            return Err(Error::Data(format!("no scene \"{scene_id}\" in manifest")));
        }
        Ok(moved)
    }

    pub fn remove_scene(&mut self, scene_id: &str) -> usize {
        let before = self.entries.len();
        self.entries.retain(|e| e.scene_id != scene_id);
        before - self.entries.len()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).with_path(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        fs::write(path, self.to_json()? + "\n").with_path(path)
    }
}

/// Dataset root for a manifest path (its parent directory).
pub fn dataset_root(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(scene: &str, view: &str, split: Split) -> ManifestEntry {
        ManifestEntry::with_default_paths(scene, view, split, (64, 32), &[1, 4, 4000])
    }

    #[test]
    fn split_disjointness_is_enforced_on_add() {
        let mut m = DatasetManifest::default();
        m.add_entry(entry("a", "0", Split::Train)).unwrap();
        m.add_entry(entry("a", "1", Split::Train)).unwrap();
        m.add_entry(entry("b", "0", Split::Val)).unwrap();
        assert!(m.add_entry(entry("a", "2", Split::Test)).is_err());
        assert!(m.add_entry(entry("b", "0", Split::Val)).is_err());
        assert_eq!(m.entries.len(), 3);
        assert_eq!(m.move_scene("a", Split::Test).unwrap(), 2);
        m.validate().unwrap();
        assert_eq!(m.split(Split::Test).count(), 2);
    }

    #[test]
    fn rejects_unknown_spp() {
        let mut e = entry("a", "0", Split::Train);
        e.spp_to_path.insert(9, "a/0/9".into());
        assert!(DatasetManifest::default().add_entry(e).is_err());
    }

    #[test]
    fn json_roundtrip_and_stable_order() {
        let mut m = DatasetManifest::default();
        m.add_entry(entry("s1", "v", Split::Train)).unwrap();
        m.add_entry(entry("s2", "v", Split::Test)).unwrap();
        let text = m.to_json().unwrap();
        assert_eq!(DatasetManifest::from_json(&text).unwrap(), m);
        assert_eq!(DatasetManifest::from_json(&text).unwrap().to_json().unwrap(), text);
        let scene = text.find("scene_id").unwrap();
        let split = text.find("\"split\"").unwrap();
        assert!(scene < split);
    }

    #[test]
    fn conflicting_json_is_rejected() {
        let text = r#"{"entries":[
            {"scene_id":"a","view_id":"0","split":"train","resolution":[8,8],"spp_to_path":{"1":"a/0/1"}},
            {"scene_id":"a","view_id":"1","split":"val","resolution":[8,8],"spp_to_path":{"1":"a/1/1"}}]}"#;
        assert!(DatasetManifest::from_json(text).is_err());
    }
}
