//! Corpus ingestion: raw documents, tokenization, embeddings, the label
//! catalog and padded batches.

mod batch;
mod catalog;
mod dataset;
mod embeddings;
mod raw;
pub mod synthetic;
mod tokenize;

pub use batch::{batch, pad, PaddedBatch};
pub use catalog::{Bucket, CatalogExportEntry, LabelCatalog, LabelEntry, FREQUENT_THRESHOLD};
pub use dataset::{document_texts, ingest, Dataset, IngestReport, SplitStats, TokenizedDocument, DATASET_FILE, EMBEDDINGS_FILE};
pub use embeddings::{Coverage, EmbeddingMatrix, DEFAULT_DIM, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};
pub use raw::{load_corpus, load_descriptors, load_split, RawCorpus, RawDocument, Split};
pub use tokenize::{tokenize, whitespace_words};
