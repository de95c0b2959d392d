//! Retriever handles and passage lookup across shared or per-question corpora.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::corpus::{Corpus, Passage};
use crate::dense::{dense_search, DenseIndex, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::ranked::RankedList;
use crate::sparse::InvertedIndex;

pub trait Retriever: Send + Sync {
    fn id(&self) -> &str;
    fn retrieve(&self, question_id: &str, query: &str, k: usize) -> Result<RankedList>;
}

pub struct Bm25Retriever {
    id: String,
    index: InvertedIndex,
}

impl Bm25Retriever {
    pub fn new(id: impl Into<String>, index: InvertedIndex) -> Self {
        Self { id: id.into(), index }
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }
}

impl Retriever for Bm25Retriever {
    fn id(&self) -> &str {
        &self.id
    }

    fn retrieve(&self, question_id: &str, query: &str, k: usize) -> Result<RankedList> {
        if k == 0 {
            return Err(Error::Precondition("k must be >= 1".into()));
        }
        Ok(self.index.search_as(question_id, &self.id, query, k))
    }
}

pub struct DenseRetriever {
    id: String,
    index: DenseIndex,
    provider: Arc<dyn EmbeddingProvider>,
}

impl DenseRetriever {
    pub fn new(id: impl Into<String>, index: DenseIndex, provider: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            id: id.into(),
            index,
            provider,
        }
    }
}

impl Retriever for DenseRetriever {
    fn id(&self) -> &str {
        &self.id
    }

    fn retrieve(&self, question_id: &str, query: &str, k: usize) -> Result<RankedList> {
        if k == 0 {
            return Err(Error::Precondition("k must be >= 1".into()));
        }
        let qv = self
            .provider
            .embed_batch(&[query.to_string()])?
            .pop()
            .ok_or_else(|| Error::Protocol("provider returned no vector".into()))?;
        let mut list = dense_search(&self.index, question_id, &qv, k)?;
        list.retriever_id = self.id.clone();
        Ok(list)
    }
}

/// Routes each question to the retriever built over its own corpus.
pub struct PerQuestionRetriever {
    id: String,
    by_question: BTreeMap<String, Box<dyn Retriever>>,
}

impl PerQuestionRetriever {
    pub fn new(id: impl Into<String>, by_question: BTreeMap<String, Box<dyn Retriever>>) -> Self {
        Self {
            id: id.into(),
            by_question,
        }
    }
}

impl Retriever for PerQuestionRetriever {
    fn id(&self) -> &str {
        &self.id
    }

    fn retrieve(&self, question_id: &str, query: &str, k: usize) -> Result<RankedList> {
        let r = self
            .by_question
            .get(question_id)
            .ok_or_else(|| Error::Validation(format!("no corpus for question {question_id}")))?;
        let mut list = r.retrieve(question_id, query, k)?;
        list.retriever_id = self.id.clone();
        Ok(list)
    }
}

pub enum CorpusSet {
    Shared(Corpus),
    PerQuestion(BTreeMap<String, Corpus>),
}

impl CorpusSet {
    pub fn corpus_for(&self, question_id: &str) -> Option<&Corpus> {
        match self {
            CorpusSet::Shared(c) => Some(c),
            CorpusSet::PerQuestion(m) => m.get(question_id),
        }
    }

    pub fn passage(&self, question_id: &str, doc_id: &str) -> Option<&Passage> {
        self.corpus_for(question_id)?.get(doc_id)
    }

    pub fn label(&self) -> &'static str {
        match self {
            CorpusSet::Shared(_) => "shared",
            CorpusSet::PerQuestion(_) => "per_question",
        }
    }
}

/// Serves ranked lists computed elsewhere. The query is ignored: every call
/// for a question returns the stored list truncated to `k`.
pub struct PrecomputedRetriever {
    id: String,
    lists: BTreeMap<String, RankedList>,
}

impl PrecomputedRetriever {
    pub fn new(id: impl Into<String>, lists: Vec<RankedList>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for l in lists {
            let qid = l.question_id.clone();
            if map.insert(qid.clone(), l).is_some() {
                return Err(Error::Validation(format!("two precomputed lists for question {qid}")));
            }
        }
        Ok(Self { id: id.into(), lists: map })
    }
}

impl Retriever for PrecomputedRetriever {
    fn id(&self) -> &str {
        &self.id
    }

    fn retrieve(&self, question_id: &str, _query: &str, k: usize) -> Result<RankedList> {
        let mut list = self
            .lists
            .get(question_id)
            .map(|l| l.truncated(k))
            .unwrap_or_else(|| RankedList::new(question_id, self.id.clone()));
        list.retriever_id = self.id.clone();
        Ok(list)
    }
}
