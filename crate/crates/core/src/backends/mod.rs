//! Recommendation backends.
//!
//! A [`Recommender`] answers two kinds of request: produce a top-K list for
//! an audience ([`ListRequest`]) and rank a fixed candidate set for a user
//! ([`RankRequest`]). Two implementations ship: [`LlmBackend`], a caching
//! chat-completion client, and [`SyntheticBackend`], a seeded recommender
//! whose group bias is set by a [`BiasSpec`].

mod cache;
mod llm;
mod parse;
mod prompt;
mod synthetic;

use thiserror::Error;

use crate::corpus::{Domain, Item, RankingList, UserProfile};

pub use cache::{CacheEntry, ResponseCache};
pub use llm::{LlmBackend, LlmSettings, PromptRequest, API_KEY_VAR};
pub use parse::{format_ranking, normalize_title, parse_ranking, ParseError};
pub use prompt::{render_prompt, PromptTemplate, TemplateSet};
pub use synthetic::{
    synthetic_recommend, BiasSpec, SyntheticBackend, SyntheticMode, REINFORCE_FACTOR,
};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("unbound: {0}")]
    Unbound(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("http failure: {0}")]
    Http(String),
    #[error("{error}; raw response: {raw:?}")]
    Parse { error: ParseError, raw: String },
    #[error("user {0} has no gold label for the biased taxonomy")]
    MissingLabel(String),
    #[error("unknown group `{0}`")]
    UnknownGroup(String),
    #[error("returned item `{0}` is not among the candidates")]
    OutsideCandidates(String),
    #[error("cache i/o: {0}")]
    Cache(String),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

/// Who a list is generated for.
#[derive(Debug, Clone, Copy)]
pub enum Audience<'a> {
    /// A user identified by name, or by email domain when nameless.
    User(&'a UserProfile),
    /// The sensitive attribute stated explicitly ("to Female users").
    Explicit(&'a str),
    /// No user attribute at all.
    Neutral,
}

#[derive(Debug, Clone, Copy)]
pub struct ListRequest<'a> {
    pub audience: Audience<'a>,
    /// Identifies the seed stream and the list owner.
    pub subject_id: &'a str,
    pub domain: Domain,
    pub k: usize,
    pub round: u32,
    pub repeat: u32,
    /// Previously clicked items, oldest first.
    pub history: &'a [Item],
}

impl<'a> ListRequest<'a> {
    pub fn for_user(user: &'a UserProfile, domain: Domain, k: usize) -> Self {
        Self {
            audience: Audience::User(user),
            subject_id: &user.id,
            domain,
            k,
            round: 0,
            repeat: 0,
            history: &[],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RankRequest<'a> {
    /// Carries the name (or email) and browsing history.
    pub user: &'a UserProfile,
    /// Candidates in prompt order.
    pub candidates: &'a [Item],
    pub domain: Domain,
    pub round: u32,
    pub repeat: u32,
}

pub trait Recommender: Send + Sync {
    fn id(&self) -> &str;

    fn recommend(&self, req: &ListRequest<'_>) -> Result<RankingList, BackendError>;

    /// Return the candidates in ranked order.
    fn rank(&self, req: &RankRequest<'_>) -> Result<Vec<Item>, BackendError>;
}

impl<R: Recommender + ?Sized> Recommender for Box<R> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn recommend(&self, req: &ListRequest<'_>) -> Result<RankingList, BackendError> {
        (**self).recommend(req)
    }

    fn rank(&self, req: &RankRequest<'_>) -> Result<Vec<Item>, BackendError> {
        (**self).rank(req)
    }
}

impl<R: Recommender + ?Sized> Recommender for &R {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn recommend(&self, req: &ListRequest<'_>) -> Result<RankingList, BackendError> {
        (**self).recommend(req)
    }

    fn rank(&self, req: &RankRequest<'_>) -> Result<Vec<Item>, BackendError> {
        (**self).rank(req)
    }
}
