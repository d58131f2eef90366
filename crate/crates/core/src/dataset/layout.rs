//! On-disk dataset layout:
//!
//! ```text
//! <root>/images/<item_id>.png   8-bit RGB
//! <root>/outfits.json           [{"set_id": .., "items": [{"item_id": .., "category": ..}]}]
//! <root>/splits.json            {"alpha": .., "seed": .., "labeled": [..], "validation": [..], "test": [..]}
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Catalog, HeldOut, Image, Item, Outfit, SplitSpec};
use crate::{Error, Result};

pub const OUTFITS_FILE: &str = "outfits.json";
pub const SPLITS_FILE: &str = "splits.json";
pub const IMAGE_DIR: &str = "images";

#[derive(Debug, Serialize, Deserialize)]
struct ItemRecord {
    item_id: String,
    category: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct OutfitRecord {
    set_id: String,
    items: Vec<ItemRecord>,
}

/// Contents of `splits.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitsFile {
    pub alpha: f64,
    pub seed: u64,
    pub labeled: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl From<&SplitSpec> for SplitsFile {
    fn from(s: &SplitSpec) -> Self {
        Self {
            alpha: s.alpha,
            seed: s.seed,
            labeled: s.labeled_outfit_ids.iter().cloned().collect(),
            validation: s.validation_outfit_ids.iter().cloned().collect(),
            test: s.test_outfit_ids.iter().cloned().collect(),
            config_hash: None,
        }
    }
}

pub fn read_splits_file(path: &Path) -> Result<SplitsFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Loads a catalog from the directory layout. Validation and test outfits
/// are taken from `splits.json` when it exists.
pub fn load_polyvore_layout(root: &Path) -> Result<Catalog> {
    let outfits_path = root.join(OUTFITS_FILE);
    let text = fs::read_to_string(&outfits_path).map_err(|e| Error::io(&outfits_path, e))?;
    let records: Vec<OutfitRecord> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: outfits_path.display().to_string(),
        message: e.to_string(),
    })?;

    let mut categories: HashMap<String, String> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut outfits = Vec::with_capacity(records.len());
    for (n, rec) in records.into_iter().enumerate() {
        let mut item_ids = Vec::with_capacity(rec.items.len());
        for it in rec.items {
            match categories.get(&it.item_id) {
                Some(c) if *c != it.category => {
                    return Err(Error::Parse {
                        context: format!("{} record {n} (set {:?})", outfits_path.display(), rec.set_id),
                        message: format!(
                            "item {:?} listed as {:?} here but {:?} earlier",
                            it.item_id, it.category, c
                        ),
                    });
                }
                Some(_) => {}
                None => {
                    categories.insert(it.item_id.clone(), it.category.clone());
                    order.push(it.item_id.clone());
                }
            }
            item_ids.push(it.item_id);
        }
        outfits.push(Outfit {
            id: rec.set_id,
            item_ids,
        });
    }

    let image_dir = root.join(IMAGE_DIR);
    let mut missing = Vec::new();
    let mut items = Vec::with_capacity(order.len());
    for id in order {
        let path = image_dir.join(format!("{id}.png"));
        if !path.is_file() {
            missing.push(id);
            continue;
        }
        let rgb = image::open(&path)
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .to_rgb8();
        let image = Image::from_rgb8(rgb.height() as usize, rgb.width() as usize, rgb.as_raw())?;
        let category = categories.remove(&id).expect("recorded above");
        items.push(Item {
            id,
            category,
            image,
        });
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "{} item(s) have no image under {}: {}",
            missing.len(),
            image_dir.display(),
            missing.join(", ")
        )));
    }

    let catalog = Catalog::new(items, outfits)?;
    let splits_path = root.join(SPLITS_FILE);
    if splits_path.is_file() {
        let splits = read_splits_file(&splits_path)?;
        catalog.with_held_out(HeldOut {
            validation: splits.validation.into_iter().collect::<BTreeSet<_>>(),
            test: splits.test.into_iter().collect(),
        })
    } else {
        Ok(catalog)
    }
}

/// Writes images and `outfits.json`; with a split, also `splits.json`.
/// Images are quantized to 8 bits, so only catalogs whose pixels are already
/// multiples of 1/255 load back bit-identical.
pub fn write_catalog(catalog: &Catalog, root: &Path, split: Option<&SplitSpec>) -> Result<()> {
    let orphans = catalog.orphan_items();
    if !orphans.is_empty() {
        return Err(Error::Data(format!(
            "{} item(s) belong to no outfit and cannot be stored in {OUTFITS_FILE}",
            orphans.len()
        )));
    }
    let image_dir = root.join(IMAGE_DIR);
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    for item in catalog.items() {
        let path = image_dir.join(format!("{}.png", item.id));
        image::save_buffer(
            &path,
            &item.image.to_rgb8(),
            item.image.width() as u32,
            item.image.height() as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|source| Error::Image { path, source })?;
    }

    let records: Vec<OutfitRecord> = catalog
        .outfits()
        .iter()
        .enumerate()
        .map(|(o, outfit)| OutfitRecord {
            set_id: outfit.id.clone(),
            items: catalog
                .outfit_items(o)
                .iter()
                .map(|&i| ItemRecord {
                    item_id: catalog.item(i).id.clone(),
                    category: catalog.item(i).category.clone(),
                })
                .collect(),
        })
        .collect();
    write_json(&root.join(OUTFITS_FILE), &records)?;
    if let Some(split) = split {
        write_json(&root.join(SPLITS_FILE), &SplitsFile::from(split))?;
    }
    Ok(())
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn minimal_outfit_loads() {
        let dir = tempfile::tempdir().unwrap();
        let cat = Catalog::new(
            vec![item("a", "top"), item("b", "bottom")],
            vec![outfit("s1", &["a", "b"])],
        )
        .unwrap();
        write_catalog(&cat, dir.path(), None).unwrap();
        let loaded = load_polyvore_layout(dir.path()).unwrap();
        assert_eq!(loaded.outfits().len(), 1);
        assert_eq!(loaded.items().len(), 2);
    }

    #[test]
    fn round_trip_with_split() {
        let dir = tempfile::tempdir().unwrap();
        let cat = three_category_catalog(12).with_held_out(Default::default()).unwrap();
        let cat = Catalog::new(
            cat.items().iter().map(|it| Item { image: it.image.quantized(), ..it.clone() }).collect(),
            cat.outfits().to_vec(),
        )
        .unwrap();
        let split = crate::dataset::split_catalog(&cat, 0.5, 3).unwrap();
        write_catalog(&cat, dir.path(), Some(&split)).unwrap();
        let loaded = load_polyvore_layout(dir.path()).unwrap();
        let expected = cat
            .with_held_out(HeldOut {
                validation: split.validation_outfit_ids.clone(),
                test: split.test_outfit_ids.clone(),
            })
            .unwrap();
        assert_eq!(loaded, expected);
    }

    #[test]
    fn missing_image_names_the_item() {
        let dir = tempfile::tempdir().unwrap();
        let cat = Catalog::new(
            vec![item("a", "top"), item("b", "bottom")],
            vec![outfit("s1", &["a", "b"])],
        )
        .unwrap();
        write_catalog(&cat, dir.path(), None).unwrap();
        fs::remove_file(dir.path().join("images/b.png")).unwrap();
        let err = load_polyvore_layout(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains('b')), "{err}");
    }

    #[test]
    fn unknown_outfit_reference_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join(IMAGE_DIR)).unwrap();
        fs::write(
            dir.path().join(OUTFITS_FILE),
            r#"[{"set_id": "s", "items": [{"item_id": "x1", "category": "top"}, {"item_id": "ghost7", "category": "bag"}]}]"#,
        )
        .unwrap();
        let err = load_polyvore_layout(dir.path()).unwrap_err();
        assert!(err.to_string().contains("ghost7"), "{err}");
    }

    #[test]
    fn malformed_file_carries_location() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(OUTFITS_FILE), "[{\"set_id\": \"s\",\n \"items\": 5}]").unwrap();
        let err = load_polyvore_layout(dir.path()).unwrap_err();
        match err {
            Error::Parse { message, .. } => assert!(message.contains("line 2"), "{message}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn conflicting_categories_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(OUTFITS_FILE),
            r#"[{"set_id": "s1", "items": [{"item_id": "a", "category": "top"}, {"item_id": "b", "category": "bag"}]},
                {"set_id": "s2", "items": [{"item_id": "a", "category": "shoe"}, {"item_id": "b", "category": "bag"}]}]"#,
        )
        .unwrap();
        let err = load_polyvore_layout(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { ref context, .. } if context.contains("record 1")));
    }
}
