// Headless rating session: walks the pair queue exactly the way the browser
// UI does (queue_rank order, pending-only), fetches both volumes' metadata
// and a middle slice per pair, and submits one Likert score per pair.
//
//   node dist/scripts/scripted_session.js --url http://127.0.0.1:8080 \
//     --rater alice --round 1 --scores-file scores.json
//
// scores.json maps synthetic_id -> score (1..4); pairs without an entry use
// --default-score. Prints one line per rating and a final summary.

import { readFileSync } from 'node:fs';

import { ApiClient, sliceUrl } from '../src/api.js';
import { pendingPairs, sharedExtent } from '../src/state.js';

interface Args {
  url: string;
  rater: string;
  round: number;
  scoresFile: string | null;
  defaultScore: number;
}

function parseArgs(argv: string[]): Args {
  const args: Args = {
    url: 'http://127.0.0.1:8080',
    rater: '',
    round: 1,
    scoresFile: null,
    defaultScore: 1,
  };
  for (let i = 2; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (value === undefined) throw new Error(`missing value for ${key}`);
    switch (key) {
      case '--url':
        args.url = value.replace(/\/$/, '');
        break;
      case '--rater':
        args.rater = value;
        break;
      case '--round':
        args.round = Number(value);
        break;
      case '--scores-file':
        args.scoresFile = value;
        break;
      case '--default-score':
        args.defaultScore = Number(value);
        break;
      default:
        throw new Error(`unknown argument ${key}`);
    }
  }
  if (!args.rater) throw new Error('--rater is required');
  return args;
}

async function main(): Promise<void> {
  const args = parseArgs(process.argv);
  const scores: Record<string, number> = args.scoresFile
    ? (JSON.parse(readFileSync(args.scoresFile, 'utf-8')) as Record<string, number>)
    : {};
  const api = new ApiClient(args.url);

  const queue = pendingPairs(await api.pairs(), args.rater, args.round);
  let submitted = 0;
  for (const pair of queue) {
    const [syntheticMeta, trainingMeta] = await Promise.all([
      api.volumeMeta(pair.synthetic_id),
      api.volumeMeta(pair.training_id),
    ]);
    // view the middle axial slice of both panes, as the UI would
    const extent = sharedExtent(syntheticMeta, trainingMeta, 'axial');
    const index = Math.floor(extent / 2);
    for (const volumeId of [pair.synthetic_id, pair.training_id]) {
      const resp = await fetch(sliceUrl(args.url, volumeId, 'axial', index));
      if (!resp.ok) throw new Error(`slice fetch failed for ${volumeId}`);
      const head = new Uint8Array(await resp.arrayBuffer()).slice(0, 8);
      const pngMagic = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];
      if (!pngMagic.every((byte, i) => head[i] === byte)) {
        throw new Error(`slice for ${volumeId} is not a PNG`);
      }
    }
    const score = scores[pair.synthetic_id] ?? args.defaultScore;
    await api.submitRating(pair.pair_id, args.rater, score, args.round);
    submitted += 1;
    console.log(
      `rated ${pair.pair_id} (rank ${pair.queue_rank}) score=${score} round=${args.round}`,
    );
  }
  console.log(`done: ${submitted} ratings submitted for ${args.rater}`);
}

main().catch((error) => {
  console.error(String(error));
  process.exit(1);
});
