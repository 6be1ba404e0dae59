fn main() {
    std::process::exit(policy_forge::cli::run(std::env::args_os()));
}
