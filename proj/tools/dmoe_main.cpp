// SPDX-License-Identifier: Apache-2.0

#include "dmoe/cli.hpp"

int main(int argc, char** argv) { return dmoe::dispatch(argc, argv); }
