//! Per-image descriptors on the canonical 224 x 224 frame, plus PCA of
//! externally supplied embedding vectors.

pub mod color;
pub mod composition;
pub mod edges;
pub mod lineart;
pub mod palette;
pub mod pca;
pub mod preprocess;
pub mod texture;

use std::fmt;
use std::path::{Path, PathBuf};

use image::RgbImage;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::exec::{derive_seed, hash_str, map_slice, Exec};
use crate::ingest::column;
use crate::{Error, Result};

pub use color::{color_stats, ColorStats};
pub use composition::{composition_focus, CompositionFocus};
pub use edges::{canny, edge_geometry, CannyParams, EdgeGeometry, Mask};
pub use lineart::{fractal_dimension, line_art, HoughParams, LineArt};
pub use palette::{palette_kmeans, PaletteSummary, PALETTE_K};
pub use pca::{apply_pca, fit_pca, PcaModel};
pub use preprocess::preprocess;
pub use texture::{texture, Texture};

/// Feature family, derived from the column-name prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Color,
    Composition,
    Edge,
    Palette,
    Lineart,
    Texture,
    CnnPca,
    StylePca,
}

const PREFIXES: [(&str, Family); 8] = [
    ("COLOR_", Family::Color),
    ("COMPOSITION_", Family::Composition),
    ("EDGE_", Family::Edge),
    ("PALETTE_", Family::Palette),
    ("LINEART_", Family::Lineart),
    ("TEXTURE_", Family::Texture),
    ("CNN_PCA_", Family::CnnPca),
    ("STYLE_PCA_", Family::StylePca),
];

impl Family {
    /// `None` for names that are not image features (e.g. market controls).
    pub fn of(name: &str) -> Option<Family> {
        PREFIXES.iter().find(|(p, _)| name.starts_with(p)).map(|(_, f)| *f)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Color => "color",
            Family::Composition => "composition",
            Family::Edge => "edge",
            Family::Palette => "palette",
            Family::Lineart => "lineart",
            Family::Texture => "texture",
            Family::CnnPca => "cnn_pca",
            Family::StylePca => "style_pca",
        }
    }

    pub fn group(self) -> QuotaGroup {
        match self {
            Family::CnnPca => QuotaGroup::Cnn,
            Family::StylePca => QuotaGroup::Style,
            _ => QuotaGroup::Handcrafted,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Coarse groups used for selection quotas and the redundancy prune.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuotaGroup {
    Handcrafted,
    Cnn,
    Style,
}

impl QuotaGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            QuotaGroup::Handcrafted => "handcrafted",
            QuotaGroup::Cnn => "cnn",
            QuotaGroup::Style => "style",
        }
    }
}

/// One row of named features per image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl FeatureTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|(_, v)| v[j]).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut header = vec!["image_id"];
        header.extend(self.names.iter().map(String::as_str));
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for (id, v) in &self.rows {
            let mut rec = vec![id.clone()];
            rec.extend(v.iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (names, rows) = read_id_matrix(path, "image_id")?;
        Ok(Self { names, rows })
    }
}

/// Reads a CSV of an id column plus numeric columns.
fn read_id_matrix(path: &Path, id_col: &str) -> Result<(Vec<String>, Vec<(String, Vec<f64>)>)> {
    let file = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let id = column(&headers, id_col, &file)?;
    let cols: Vec<usize> = (0..headers.len()).filter(|&j| j != id).collect();
    let names = cols.iter().map(|&j| headers[j].trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let vals = cols
            .iter()
            .map(|&j| {
                rec[j].trim().parse::<f64>().map_err(|_| Error::Parse {
                    file: file.clone(),
                    line: i + 2,
                    message: format!("bad number {:?} in column {}", &rec[j], &headers[j]),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((rec[id].to_string(), vals));
    }
    Ok((names, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub seed: u64,
    pub canny: CannyParams,
    pub hough: HoughParams,
    pub palette_k: usize,
    pub cnn_pcs: usize,
    pub style_pcs: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            canny: CannyParams::default(),
            hough: HoughParams::default(),
            palette_k: PALETTE_K,
            cnn_pcs: 100,
            style_pcs: 50,
        }
    }
}

/// Seed for the stochastic parts (k-means++ seeding, Hough visiting order)
/// of one image.
pub fn image_seed(master: u64, image_id: &str) -> u64 {
    derive_seed(master, hash_str(image_id))
}

/// All classic descriptors of an already preprocessed frame, in stable order.
pub fn extract_image(img: &RgbImage, image_id: &str, cfg: &ExtractConfig) -> Result<Vec<(String, f64)>> {
    let seed = image_seed(cfg.seed, image_id);
    let gray = color::to_gray(img);
    let edge_map = canny(&gray, cfg.canny);
    let mut out: Vec<(String, f64)> = Vec::with_capacity(64);
    let mut push = |v: Vec<(&'static str, f64)>| out.extend(v.into_iter().map(|(n, x)| (n.to_string(), x)));
    push(color_stats(img).named());
    push(composition_focus(img).named());
    push(edge_geometry(&gray, &edge_map, cfg.canny).named());
    out.extend(palette_kmeans(img, cfg.palette_k, seed).named());
    out.extend(line_art(&gray, &edge_map, cfg.hough, seed).named().into_iter().map(|(n, x)| (n.to_string(), x)));
    out.extend(texture(&gray).named());
    if let Some((n, _)) = out.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Image { image_id: image_id.to_string(), message: format!("non-finite value for {n}") });
    }
    Ok(out)
}

/// Column names produced by [`extract_image`] for a given palette size.
pub fn classic_feature_names(cfg: &ExtractConfig) -> Vec<String> {
    let img = RgbImage::new(16, 16);
    extract_image(&img, "", cfg).map(|v| v.into_iter().map(|(n, _)| n).collect()).unwrap_or_default()
}

/// Image files (png/jpg/jpeg) in a directory, sorted; the id is the file stem.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_image(path: &Path, image_id: &str) -> Result<RgbImage> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|e| Error::Image { image_id: image_id.to_string(), message: e.to_string() })
}

/// Decodes, preprocesses and extracts every image in `dir`.
pub fn extract_dir(dir: &Path, cfg: &ExtractConfig, exec: Exec) -> Result<FeatureTable> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(Error::invalid(format!("no png/jpeg images in {}", dir.display())));
    }
    let results = map_slice(exec, &files, |(id, path)| {
        let img = load_image(path, id)?;
        let frame = preprocess(&img, id)?;
        extract_image(&frame, id, cfg)
    });
    let mut table = FeatureTable::default();
    for ((id, _), r) in files.iter().zip(results) {
        let feats = r?;
        if table.names.is_empty() {
            table.names = feats.iter().map(|(n, _)| n.clone()).collect();
        }
        table.rows.push((id.clone(), feats.into_iter().map(|(_, v)| v).collect()));
    }
    Ok(table)
}

/// Embedding file: `image_id` followed by numeric columns `v0..v{d-1}`.
pub fn load_embeddings(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    if !path.exists() {
        return Err(Error::invalid(format!("embeddings file {} does not exist", path.display())));
    }
    let (_, rows) = read_id_matrix(path, "image_id")?;
    if let Some(d) = rows.first().map(|r| r.1.len()) {
        if d == 0 {
            return Err(Error::invalid(format!("{} has no embedding columns", path.display())));
        }
    }
    Ok(rows)
}

/// Fits a PCA on the embeddings of the images in `table` and appends the
/// scores as `{prefix}1..{prefix}{d_out}` columns.
pub fn attach_pca(
    table: &mut FeatureTable,
    embeddings: &[(String, Vec<f64>)],
    d_out: usize,
    prefix: &str,
) -> Result<PcaModel> {
    let by_id: std::collections::HashMap<&str, &Vec<f64>> =
        embeddings.iter().map(|(id, v)| (id.as_str(), v)).collect();
    let mut rows = Vec::with_capacity(table.rows.len());
    for (id, _) in &table.rows {
        let v = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::invalid(format!("image {id} has no embedding row")))?;
        rows.push(*v);
    }
    let d = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("embedding rows have unequal lengths"));
    }
    let m = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let model = fit_pca(&m, d_out)?;
    for ((_, vals), emb) in table.rows.iter_mut().zip(&rows) {
        vals.extend(apply_pca(&model, emb));
    }
    table.names.extend((1..=d_out).map(|k| format!("{prefix}{k}")));
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_from_prefix() {
        assert_eq!(Family::of("EDGE_RANGE_X"), Some(Family::Edge));
        assert_eq!(Family::of("CNN_PCA_12"), Some(Family::CnnPca));
        assert_eq!(Family::of("COLOR_HUE_MEAN_SIN"), Some(Family::Color));
        assert_eq!(Family::of("ETH_return"), None);
        assert_eq!(Family::StylePca.group(), QuotaGroup::Style);
        assert_eq!(Family::Texture.group(), QuotaGroup::Handcrafted);
    }

    #[test]
    fn every_classic_name_has_a_family() {
        let names = classic_feature_names(&ExtractConfig::default());
        assert_eq!(names.len(), 50);
        assert!(names.iter().all(|n| Family::of(n).is_some()));
    }
}
