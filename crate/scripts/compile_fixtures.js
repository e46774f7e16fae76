#!/usr/bin/env node
// Regenerates compiler fixtures (compact AST + runtime bytecode) for .sol files.
//
// usage: SOLC_MODULE=/path/to/node_modules/solc node scripts/compile_fixtures.js <dir>
//
// The checked-in fixtures were produced with solc-js 0.5.17 (optimizer off).
const fs = require('fs');
const path = require('path');
const solc = require(process.env.SOLC_MODULE || 'solc');

const dir = process.argv[2];
if (!dir) {
  console.error('usage: compile_fixtures.js <dir>');
  process.exit(1);
}

for (const file of fs.readdirSync(dir).filter((f) => f.endsWith('.sol')).sort()) {
  const stem = file.slice(0, -4);
  const input = {
    language: 'Solidity',
    sources: { [file]: { content: fs.readFileSync(path.join(dir, file), 'utf8') } },
    settings: {
      optimizer: { enabled: false, runs: 200 },
      outputSelection: { '*': { '*': ['evm.deployedBytecode.object'], '': ['ast'] } },
    },
  };
  const out = JSON.parse(solc.compile(JSON.stringify(input)));
  const errors = (out.errors || []).filter((e) => e.severity === 'error');
  if (errors.length) {
    console.error(file, errors.map((e) => e.formattedMessage).join('\n'));
    process.exit(2);
  }
  const contracts = Object.entries(out.contracts[file]);
  const [, compiled] = contracts[contracts.length - 1];
  fs.writeFileSync(path.join(dir, `${stem}.ast.json`), JSON.stringify(out.sources[file].ast, null, 1) + '\n');
  fs.writeFileSync(path.join(dir, `${stem}.bin`), compiled.evm.deployedBytecode.object + '\n');
  console.log(`${stem}: ${compiled.evm.deployedBytecode.object.length / 2} bytes`);
}
