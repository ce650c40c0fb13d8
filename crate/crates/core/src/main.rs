fn main() {
    std::process::exit(fpr_estimators::cli::run(std::env::args_os()));
}
