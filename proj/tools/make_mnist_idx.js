#!/usr/bin/env node
// Converts the digit arrays bundled with the npm "mnist" package into the
// classic IDX file quartet (train/t10k images+labels) so the C++ loader can
// read them. Usage:
//
//   npm install mnist
//   node tools/make_mnist_idx.js node_modules/mnist/src/digits data/mnist
//
// The split is a fixed seeded shuffle: 8000 train / rest test.

'use strict';
const fs = require('fs');
const path = require('path');

if (process.argv.length !== 4) {
  console.error('usage: make_mnist_idx.js <digits-dir> <out-dir>');
  process.exit(2);
}
const digitsDir = process.argv[2];
const outDir = process.argv[3];
const TRAIN_N = 8000;

// deterministic 64-bit-ish LCG so the split never changes between runs
let lcg = 0x2545f4914f6cdd1n;
function nextU32() {
  lcg = (lcg * 6364136223846793005n + 1442695040888963407n) & 0xffffffffffffffffn;
  return Number((lcg >> 33n) & 0xffffffffn);
}

const images = [];
const labels = [];
for (let d = 0; d < 10; d++) {
  const raw = JSON.parse(fs.readFileSync(path.join(digitsDir, d + '.json')));
  const flat = raw.data;
  const n = flat.length / 784;
  for (let i = 0; i < n; i++) {
    const px = Buffer.alloc(784);
    for (let j = 0; j < 784; j++) {
      px[j] = Math.max(0, Math.min(255, Math.round(flat[i * 784 + j] * 255)));
    }
    images.push(px);
    labels.push(d);
  }
}

// Fisher-Yates with the seeded LCG
for (let i = images.length - 1; i > 0; i--) {
  const j = nextU32() % (i + 1);
  [images[i], images[j]] = [images[j], images[i]];
  [labels[i], labels[j]] = [labels[j], labels[i]];
}

function writeIdx(prefix, imgs, labs) {
  const n = imgs.length;
  const ih = Buffer.alloc(16);
  ih.writeUInt32BE(2051, 0);
  ih.writeUInt32BE(n, 4);
  ih.writeUInt32BE(28, 8);
  ih.writeUInt32BE(28, 12);
  fs.writeFileSync(path.join(outDir, prefix + '-images-idx3-ubyte'),
                   Buffer.concat([ih, ...imgs]));
  const lh = Buffer.alloc(8);
  lh.writeUInt32BE(2049, 0);
  lh.writeUInt32BE(n, 4);
  fs.writeFileSync(path.join(outDir, prefix + '-labels-idx1-ubyte'),
                   Buffer.concat([lh, Buffer.from(labs)]));
}

fs.mkdirSync(outDir, { recursive: true });
writeIdx('train', images.slice(0, TRAIN_N), labels.slice(0, TRAIN_N));
writeIdx('t10k', images.slice(TRAIN_N), labels.slice(TRAIN_N));
console.log(`wrote ${TRAIN_N} train / ${images.length - TRAIN_N} test samples to ${outDir}`);
