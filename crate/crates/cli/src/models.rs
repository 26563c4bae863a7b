use std::path::PathBuf;

use clap::Args;
use nss_core::store::ModelStore;

use crate::{print_json, runtime, usage, CliResult};

#[derive(Args)]
pub struct ExportArgs {
    /// Service data directory.
    #[arg(long)]
    data_dir: PathBuf,
    /// Model id; defaults to the active model.
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct ImportArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    file: PathBuf,
    /// Make the imported model the active one.
    #[arg(long)]
    activate: bool,
}

fn open(data_dir: &std::path::Path) -> CliResult<ModelStore> {
    if !data_dir.is_dir() {
        return Err(usage(format!("{}: not a directory", data_dir.display())));
    }
    ModelStore::open(data_dir.join("models")).map_err(runtime)
}

pub fn export(a: &ExportArgs, json: bool) -> CliResult {
    let store = open(&a.data_dir)?;
    let id = match &a.id {
        Some(id) => id.clone(),
        None => store.active_id().map_err(runtime)?.ok_or_else(|| runtime("no active model"))?,
    };
    store.export(&id, &a.out).map_err(|e| runtime(format!("model {id}: {e}")))?;
    if json {
        print_json(&serde_json::json!({"id": id, "path": a.out}));
    } else {
        println!("{id}");
    }
    Ok(())
}

pub fn import(a: &ImportArgs, json: bool) -> CliResult {
    let bytes = std::fs::read(&a.file).map_err(|e| usage(format!("{}: {e}", a.file.display())))?;
    let store = open(&a.data_dir)?;
    let id = store.import(&bytes).map_err(|e| usage(format!("{}: {e}", a.file.display())))?;
    if a.activate {
        store.set_active(&id).map_err(runtime)?;
    }
    if json {
        print_json(&serde_json::json!({"id": id, "active": a.activate}));
    } else {
        println!("{id}");
    }
    Ok(())
}
