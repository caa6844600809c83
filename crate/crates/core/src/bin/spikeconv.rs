fn main() {
    std::process::exit(spikeconv::cli::main_run());
}
