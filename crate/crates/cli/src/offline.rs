use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use nss_core::classifier::UpdateVariant;
use nss_core::features::default_feature_order;
use nss_core::store::{decode_artifact, encode_artifact, write_atomic, ModelArtifact};
use nss_core::training::{classify_raw, train_model, RawSample, TrainingOptions};
use nss_lab::{desk_scenarios, gaussian_fixture, labeled_dataset};
use serde::Serialize;

use crate::{print_json, runtime, usage, CliResult};

#[derive(Clone, Copy, ValueEnum)]
pub enum Variant {
    A,
    B,
}

#[derive(Args)]
pub struct TrainArgs {
    /// CSV with header `f1,...,fn,label`.
    #[arg(long)]
    samples: PathBuf,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_passes: Option<usize>,
    #[arg(long, value_enum)]
    variant: Option<Variant>,
    /// Features are already normalized; embed no normalizer.
    #[arg(long)]
    no_normalize: bool,
    /// Class set in id order; defaults to labels in order of first appearance.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    /// Creation time stored in the model; 0 keeps output reproducible.
    #[arg(long, default_value_t = 0)]
    created_at_ms: u64,
}

#[derive(Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV with a feature header; a trailing `label` column is compared.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DatasetKind {
    /// Raw features of the four preset states.
    Desk,
    /// Two separated 2-D Gaussian blobs.
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Args)]
pub struct DatasetArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "desk")]
    kind: DatasetKind,
    #[arg(long, default_value_t = 50)]
    per_class: u64,
    #[arg(long, default_value_t = 10)]
    interval: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Gaussian fixture half to write.
    #[arg(long, value_enum, default_value = "train")]
    split: Split,
}

/// Feature CSV: header names plus rows, with labels when the last column is `label`.
pub struct FeatureTable {
    pub feature_order: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Option<Vec<String>>,
}

pub fn read_table(path: &Path) -> CliResult<FeatureTable> {
    let file = File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| usage(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let labeled = header.last().is_some_and(|h| h == "label");
    let feature_order: Vec<String> = header[..header.len() - usize::from(labeled)].to_vec();
    if feature_order.is_empty() {
        return Err(usage(format!("{}: no feature columns", path.display())));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let row = feature_order
            .iter()
            .enumerate()
            .map(|(c, name)| {
                rec[c].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    usage(format!("{}:{line}: {name} is not a finite number: '{}'", path.display(), &rec[c]))
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
        if labeled {
            labels.push(rec[feature_order.len()].to_string());
        }
    }
    Ok(FeatureTable { feature_order, rows, labels: labeled.then_some(labels) })
}

pub fn read_model(path: &Path) -> CliResult<(String, ModelArtifact)> {
    let bytes = std::fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    decode_artifact(&bytes).map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn train(a: &TrainArgs, json: bool) -> CliResult {
    let table = read_table(&a.samples)?;
    let labels = table.labels.ok_or_else(|| usage("samples file needs a final 'label' column"))?;
    let classes = if a.classes.is_empty() {
        let mut seen: Vec<String> = Vec::new();
        for l in &labels {
            if !seen.contains(l) {
                seen.push(l.clone());
            }
        }
        seen
    } else {
        a.classes.clone()
    };
    let mut opts = TrainingOptions::default();
    if let Some(d) = a.delta {
        opts.params.delta = d;
    }
    if let Some(al) = a.alpha {
        opts.alpha = al;
    }
    if let Some(e) = a.epsilon {
        opts.params.epsilon = e;
    }
    if let Some(n) = a.max_passes {
        opts.params.max_passes = n;
    }
    if let Some(v) = a.variant {
        opts.params.update_variant = match v {
            Variant::A => UpdateVariant::A,
            Variant::B => UpdateVariant::B,
        };
    }
    opts.normalize = !a.no_normalize;
    opts.params.validate().map_err(usage)?;

    let samples: Vec<RawSample> = table
        .rows
        .into_iter()
        .zip(labels)
        .map(|(features, label)| RawSample { features, label })
        .collect();
    let (artifact, report) =
        train_model(&samples, &classes, table.feature_order, &opts, a.created_at_ms).map_err(usage)?;
    let (_, bytes) = encode_artifact(&artifact).map_err(runtime)?;
    write_atomic(&a.out, &bytes).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;

    if json {
        print_json(&report);
    } else {
        println!("model {}", report.model_id);
        println!("path {}", a.out.display());
        println!("samples {}", report.samples);
        println!("classes {}", report.classes.join(","));
        println!(
            "stage1 passes={} converged={} updates={}",
            report.stage1.passes, report.stage1.converged, report.stage1.updates
        );
        println!(
            "stage2 passes={} converged={} reassignments={}",
            report.stage2.passes, report.stage2.converged, report.stage2.reassignments
        );
        println!("training_accuracy {}", report.training_accuracy);
        println!("unidentified {}", report.unidentified);
    }
    Ok(())
}

#[derive(Serialize)]
struct Classified<'a> {
    row: usize,
    label: &'a str,
    margin: f64,
    potentials: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    expected: Option<&'a str>,
}

pub fn classify(a: &ClassifyArgs, json: bool) -> CliResult {
    let (_, artifact) = read_model(&a.model)?;
    let table = read_table(&a.input)?;
    let expected = artifact.feature_order.len();
    if table.feature_order.len() != expected {
        return Err(usage(format!(
            "model expects {expected} features ({}), input has {}",
            artifact.feature_order.join(","),
            table.feature_order.len()
        )));
    }
    if table.feature_order != artifact.feature_order {
        return Err(usage(format!(
            "input columns {} differ from model features {}",
            table.feature_order.join(","),
            artifact.feature_order.join(",")
        )));
    }
    if !json {
        println!("row\tlabel\tmargin\tpotentials");
    }
    for (i, row) in table.rows.iter().enumerate() {
        let (_, d) = classify_raw(&artifact, row).map_err(runtime)?;
        let out = Classified {
            row: i,
            label: d.label.name(),
            margin: d.margin,
            potentials: &d.potentials,
            expected: table.labels.as_ref().map(|l| l[i].as_str()),
        };
        if json {
            print_json(&out);
        } else {
            let pots: Vec<String> = d.potentials.iter().map(f64::to_string).collect();
            println!("{}\t{}\t{}\t{}", i, out.label, out.margin, pots.join(","));
        }
    }
    Ok(())
}

pub fn dataset(a: &DatasetArgs, json: bool) -> CliResult {
    let (header, rows, labels): (Vec<String>, Vec<Vec<f64>>, Vec<String>) = match a.kind {
        DatasetKind::Desk => {
            if a.per_class == 0 || a.interval == 0 {
                return Err(usage("--per-class and --interval must be positive"));
            }
            let ds = labeled_dataset(&desk_scenarios(a.per_class, a.interval, a.seed), a.interval)
                .map_err(runtime)?;
            let labels = ds.samples.iter().map(|s| s.label.name.clone()).collect();
            (default_feature_order(), ds.raw, labels)
        }
        DatasetKind::Gaussian => {
            let fx = gaussian_fixture(a.seed);
            let part = match a.split {
                Split::Train => fx.train,
                Split::Test => fx.test,
            };
            let rows = part.iter().map(|s| s.vector.values().to_vec()).collect();
            let labels = part.iter().map(|s| s.label.name.clone()).collect();
            (vec!["x".into(), "y".into()], rows, labels)
        }
    };
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    let mut head = header.clone();
    head.push("label".into());
    w.write_record(&head).map_err(runtime)?;
    for (row, label) in rows.iter().zip(&labels) {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(label.clone());
        w.write_record(&rec).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    if json {
        print_json(&serde_json::json!({"path": a.out, "rows": rows.len()}));
    } else {
        println!("rows {}", rows.len());
        println!("path {}", a.out.display());
    }
    Ok(())
}
