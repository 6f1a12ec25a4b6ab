//! Behavioral stereotyping harness: career choices under explicit or
//! remembered gender cues, open-ended sport recommendations, and a
//! record/replay layer so every run can be reproduced offline.

mod classify;
mod client;
mod eval;

pub use classify::{
    classify_response, read_pairs_csv, Classification, ClassifierRules, OccupationPair, DEFAULT_HEDGE_WORDS,
    DEFAULT_REFUSAL_PHRASES,
};
pub use client::{
    extract_content, record_cassette, Cassette, CassetteEntry, CassetteHeader, ChatClient, ChatRequest, HttpClient,
    RecordingClient, ReplayClient, DEFAULT_TEMPERATURE,
};
pub use eval::{
    build_memory_prompt, career_eval, career_outcomes_csv, career_report_csv, career_request, default_sport_lexicon,
    read_cues_csv, select_sports, sport_eval, sport_report_csv, CareerResult, Condition, Cue, EvalConfig, EvalOutcome,
    GroupSummary, MemoryKind, SportOutcome, SportResult, SportRow, SyntheticChat, CAREER_USER_TEMPLATE,
    DEFAULT_SPORTS, EXPLICIT_USER_TEMPLATE, SPORT_ALPHA, SPORT_USER_PROMPT, SYNTHETIC_REFUSAL,
};
