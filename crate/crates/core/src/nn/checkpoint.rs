//! Parameter checkpoints: one EMB1 matrix per tensor plus a JSON manifest
//! mapping parameter name to shape.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::datamodel::{read_matrix, write_matrix};
use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";

fn file_name(param: &str) -> String {
    format!("{}.emb", param.replace('/', "_"))
}

pub fn save(store: &ParamStore, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = BTreeMap::new();
    for (name, t) in store.iter() {
        manifest.insert(name.to_string(), t.shape().to_vec());
        let rows: Vec<Vec<f64>> = (0..t.rows()).map(|r| t.row_vec(r)).collect();
        write_matrix(&dir.join(file_name(name)), &rows, t.cols())?;
    }
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn load(dir: &Path) -> Result<ParamStore> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: BTreeMap<String, Vec<usize>> =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let mut store = ParamStore::new();
    for (name, shape) in manifest {
        let (rows, _) = read_matrix(&dir.join(file_name(&name)))?;
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}
