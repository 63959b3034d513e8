#!/usr/bin/env node
// Builds IDX-format digit files from the npm "mnist" package (which bundles
// ~1000 MNIST samples per class, pixel values stored as v/255).
//
// Usage: node tools/fetch_mnist_npm.js [path-to-node_modules/mnist] [outdir]
// Writes gzipped train/test IDX files (80/20 split per class, stored order).

'use strict';
const fs = require('fs');
const path = require('path');
const zlib = require('zlib');

const pkg = process.argv[2] || path.join(process.cwd(), 'node_modules', 'mnist');
const outdir = process.argv[3] || path.join(process.cwd(), 'data');
const DIM = 28;
const PX = DIM * DIM;

function loadClass(c) {
  const raw = JSON.parse(fs.readFileSync(path.join(pkg, 'src', 'digits', c + '.json'))).data;
  const n = raw.length / PX;
  const out = [];
  for (let i = 0; i < n; i++) {
    const img = Buffer.alloc(PX);
    for (let j = 0; j < PX; j++) img[j] = Math.round(raw[i * PX + j] * 255);
    out.push(img);
  }
  return out;
}

function idxImages(images) {
  const header = Buffer.alloc(16);
  header.writeUInt32BE(0x00000803, 0);
  header.writeUInt32BE(images.length, 4);
  header.writeUInt32BE(DIM, 8);
  header.writeUInt32BE(DIM, 12);
  return Buffer.concat([header, ...images]);
}

function idxLabels(labels) {
  const header = Buffer.alloc(8);
  header.writeUInt32BE(0x00000801, 0);
  header.writeUInt32BE(labels.length, 4);
  return Buffer.concat([header, Buffer.from(labels)]);
}

const train = { images: [], labels: [] };
const test = { images: [], labels: [] };
for (let c = 0; c < 10; c++) {
  const imgs = loadClass(c);
  const nTrain = Math.floor(imgs.length * 0.8);
  for (let i = 0; i < imgs.length; i++) {
    const dst = i < nTrain ? train : test;
    dst.images.push(imgs[i]);
    dst.labels.push(c);
  }
  console.log(`class ${c}: ${nTrain} train, ${imgs.length - nTrain} test`);
}

fs.mkdirSync(outdir, { recursive: true });
const files = {
  'train-images-idx3-ubyte.gz': idxImages(train.images),
  'train-labels-idx1-ubyte.gz': idxLabels(train.labels),
  't10k-images-idx3-ubyte.gz': idxImages(test.images),
  't10k-labels-idx1-ubyte.gz': idxLabels(test.labels),
};
for (const [name, buf] of Object.entries(files)) {
  fs.writeFileSync(path.join(outdir, name), zlib.gzipSync(buf, { level: 9 }));
  console.log(`wrote ${path.join(outdir, name)}`);
}
