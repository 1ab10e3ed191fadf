# Bundled sdelbo configs: training runs under train/, property suites under check/.
