pub mod baselines;
pub mod llm;

pub use baselines::{
    load_logprobs, perplexity, select_noncritical, select_random, select_top_perplexity, PerplexityScope, StepLogprobs,
};
pub use llm::{
    build_prompt, enforce_cap, parse_response, select_with_llm, ChatTransport, EndpointConfig, HttpTransport,
    ResponseCache, SelectorPromptConfig, SelectorResponse,
};
