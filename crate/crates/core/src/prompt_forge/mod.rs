//! Labeled synthetic prompt corpora. Every prompt records the substitutions
//! that produced it, and its labels can be recovered from that record.

mod bank;
mod generate;

pub use bank::{
    builtin_items, builtin_questions, read_item_bank, read_question_bank, ItemSpec, PromptTemplate, TemplateBank,
    TranslationBank, MIX_LANGUAGES, PLACEHOLDERS,
};
pub use generate::{
    cell_label, cell_of, familial_gender, gen_explicit_corpus, gen_item_prompts, gen_multilingual_mix, gen_multiturn,
    gen_negative_corpus, gen_validation_prompts, read_prompts_jsonl, recover_labels, render, write_prompts_jsonl,
    LabeledPrompt, Substitution, ValidationKind, FAMILIAL_ROLES,
};
