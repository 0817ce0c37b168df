/**
 * Minimal server-sent-events decoder built on fetch + ReadableStream.
 *
 * The browser's EventSource cannot attach to a response we already hold and
 * offers no backpressure, so the event stream endpoint is consumed with
 * fetch() and decoded here.  The decoder is incremental: chunks may split
 * anywhere, including inside a field name, inside a UTF-8 sequence (handled
 * by TextDecoder upstream) or between the two newlines that terminate an
 * event.
 */

const SEPARATOR = /\r?\n\r?\n/;
const LINE = /\r?\n/;

/** Incremental decoder: feed text chunks, get completed `data:` payloads. */
export class SseDecoder {
  private buffer = "";

  /**
   * Consume one chunk of text and return the data payload of every event
   * completed by it.  Multi-line data fields are joined with newlines per
   * the SSE framing rules; comment and non-data fields are ignored.
   */
  push(chunk: string): string[] {
    this.buffer += chunk;
    const events: string[] = [];
    for (;;) {
      const match = SEPARATOR.exec(this.buffer);
      if (match === null) break;
      const raw = this.buffer.slice(0, match.index);
      this.buffer = this.buffer.slice(match.index + match[0].length);
      const data = raw
        .split(LINE)
        .filter((line) => line.startsWith("data:"))
        .map((line) => line.slice(5).replace(/^ /, ""))
        .join("\n");
      if (data !== "") events.push(data);
    }
    return events;
  }

  /** Text received after the last complete event (diagnostic only). */
  get residue(): string {
    return this.buffer;
  }
}

/**
 * Decode a byte stream of server-sent events into data payload strings.
 * Used directly on `response.body`; completes when the stream ends.
 */
export async function* readSseStream(
  stream: ReadableStream<Uint8Array>,
): AsyncGenerator<string, void, undefined> {
  const reader = stream.getReader();
  const decoder = new TextDecoder();
  const sse = new SseDecoder();
  try {
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      yield* sse.push(decoder.decode(value, { stream: true }));
    }
    yield* sse.push(decoder.decode());
  } finally {
    reader.releaseLock();
  }
}
