use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::KnowledgeGraph;
use super::image::SyntheticImage;
use super::labels::extract_nodes;
use super::synth::Sample;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct ImageRecord {
    shape: [usize; 3],
    data: Vec<f64>,
}

/// One JSONL line of the corpus file.
#[derive(Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    image: ImageRecord,
    report: String,
    nodes: Vec<String>,
}

pub fn write_corpus_jsonl(path: &Path, samples: &[Sample], graph: &KnowledgeGraph) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let rec = SampleRecord {
            id: s.id.clone(),
            image: ImageRecord {
                shape: s.image.shape(),
                data: s.image.pixels().to_vec(),
            },
            report: s.report.clone(),
            nodes: s.node_labels.names(graph).into_iter().map(str::to_string).collect(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a corpus file. The `nodes` field must equal the mentions extracted
/// from `report`.
pub fn read_corpus_jsonl(path: &Path, graph: &KnowledgeGraph) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| Error::Parse {
            what: "corpus",
            location: format!("{}:{}", path.display(), ln + 1),
            detail,
        };
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let [h, w, c] = rec.image.shape;
        let mut image = SyntheticImage::new(h, w, c, rec.image.data).map_err(|e| bad(e.to_string()))?;
        let words: Vec<&str> = rec.report.split_whitespace().collect();
        let node_labels = extract_nodes(&words, graph);
        let mut listed = rec.nodes.clone();
        listed.sort();
        let mut derived: Vec<String> = node_labels.names(graph).into_iter().map(str::to_string).collect();
        derived.sort();
        if listed != derived {
            return Err(bad(format!("nodes {listed:?} disagree with report mentions {derived:?}")));
        }
        image.set_planted_findings(
            node_labels
                .indices()
                .filter(|&i| graph.organ_of(i).is_some())
                .map(|i| graph.name(i).to_string())
                .collect(),
        );
        out.push(Sample {
            id: rec.id,
            image,
            report: rec.report,
            node_labels,
        });
    }
    Ok(out)
}
