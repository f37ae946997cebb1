fn main() {
    std::process::exit(prompt_retrieval::cli::dispatch(std::env::args_os()));
}
