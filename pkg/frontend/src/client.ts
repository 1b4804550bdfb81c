/** Agent-facing client over TCP: connect, receive state, send commands.
 *
 * The exchange is strictly alternating; the handle enforces it locally so
 * the process cannot commit a protocol violation. A handle has a single
 * owner.
 */
import * as net from "node:net";

import {
  CodecError,
  FrameSplitter,
  FramingError,
  PROTOCOL_VERSION,
  MAX_COMMANDS,
  decodeMessage,
  encodeMessage,
  writeFramed,
} from "./codec.js";
import { Command, Frame, Message, UnitTypeSpec } from "./model.js";

export class ClientError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ClientError";
  }
}

export class UsageError extends ClientError {
  constructor(message: string) {
    super(message);
    this.name = "UsageError";
  }
}

export class ServerFault extends ClientError {
  constructor(message: string) {
    super(message);
    this.name = "ServerFault";
  }
}

export interface ClientState {
  setup: Extract<Message, { kind: "setup" }>;
  latestFrame: Frame | null;
  gameEnded: boolean;
  lastResult: number | null;
  finalFrame: number | null;
}

export type TranscriptEntry = ["send" | "recv", Buffer];

export class GameClient {
  readonly state: ClientState;
  readonly transcript: TranscriptEntry[] | null;

  private awaitingCommands = false;
  private closed = false;
  private readonly queue: Buffer[] = [];
  private waiter: { resolve: (b: Buffer) => void; reject: (e: Error) => void } | null = null;
  private readonly splitter: FrameSplitter;
  private failure: Error | null = null;

  private constructor(
    private readonly socket: net.Socket,
    setup: Extract<Message, { kind: "setup" }>,
    capture: boolean,
    splitter: FrameSplitter,
  ) {
    this.state = {
      setup,
      latestFrame: null,
      gameEnded: false,
      lastResult: null,
      finalFrame: null,
    };
    this.transcript = capture ? [] : null;
    this.splitter = splitter;
    this.drainSplitter();
    socket.on("data", (chunk) => this.onData(chunk));
    socket.on("error", (err) => this.fail(new ClientError(`connection lost: ${err.message}`)));
    socket.on("close", () => this.fail(new ClientError("server closed the connection")));
  }

  get playerId(): number {
    return this.state.setup.playerId;
  }

  get roster(): UnitTypeSpec[] {
    return this.state.setup.roster;
  }

  static connect(
    host: string,
    port: number,
    options: { name?: string; requestedRole?: number; capture?: boolean; timeoutMs?: number } = {},
  ): Promise<GameClient> {
    const name = options.name ?? "skirmish-ts";
    const timeoutMs = options.timeoutMs ?? 10_000;
    return new Promise((resolve, reject) => {
      const socket = net.connect({ host, port, noDelay: true });
      const splitter = new FrameSplitter();
      const helloPayload = encodeMessage({
        kind: "hello",
        protoVersion: PROTOCOL_VERSION,
        clientName: name,
        requestedRole: options.requestedRole ?? 0,
      });
      const timer = setTimeout(() => {
        socket.destroy();
        reject(new ClientError("handshake timed out"));
      }, timeoutMs);
      const abort = (err: Error) => {
        clearTimeout(timer);
        socket.destroy();
        reject(err);
      };
      socket.once("error", (err) => abort(new ClientError(`cannot connect: ${err.message}`)));
      socket.once("close", () => abort(new ClientError("server closed the connection during handshake")));
      socket.on("connect", () => {
        socket.write(writeFramed(helloPayload));
      });
      const onData = (chunk: Buffer) => {
        splitter.push(chunk);
        let payload: Buffer | null;
        try {
          payload = splitter.next();
        } catch (err) {
          abort(err as Error);
          return;
        }
        if (payload === null) return;
        clearTimeout(timer);
        socket.removeAllListeners();
        let msg: Message;
        try {
          msg = decodeMessage(payload);
        } catch (err) {
          socket.destroy();
          reject(new ServerFault(`handshake failed: ${(err as Error).message}`));
          return;
        }
        if (msg.kind === "error") {
          socket.destroy();
          reject(new ServerFault(`server rejected handshake, error ${msg.code}: ${msg.text}`));
          return;
        }
        if (msg.kind !== "setup") {
          socket.destroy();
          reject(new ServerFault(`expected SETUP, got ${msg.kind}`));
          return;
        }
        // the splitter moves to the client with any bytes that followed SETUP
        const client = new GameClient(socket, msg, options.capture ?? false, splitter);
        if (client.transcript !== null) {
          client.transcript.unshift(["send", helloPayload], ["recv", payload]);
        }
        resolve(client);
      };
      socket.on("data", onData);
    });
  }

  private onData(chunk: Buffer): void {
    this.splitter.push(chunk);
    this.drainSplitter();
  }

  private drainSplitter(): void {
    while (true) {
      let payload: Buffer | null;
      try {
        payload = this.splitter.next();
      } catch (err) {
        this.fail(new ServerFault(`bad framing from server: ${(err as FramingError).message}`));
        return;
      }
      if (payload === null) return;
      this.enqueue(payload);
    }
  }

  private enqueue(payload: Buffer): void {
    if (this.waiter !== null) {
      const w = this.waiter;
      this.waiter = null;
      w.resolve(payload);
    } else {
      this.queue.push(payload);
    }
  }

  private fail(err: Error): void {
    if (this.failure === null) this.failure = err;
    if (this.waiter !== null) {
      const w = this.waiter;
      this.waiter = null;
      w.reject(this.failure);
    }
  }

  private nextPayload(): Promise<Buffer> {
    const queued = this.queue.shift();
    if (queued !== undefined) return Promise.resolve(queued);
    if (this.failure !== null) return Promise.reject(this.failure);
    if (this.waiter !== null) {
      return Promise.reject(new UsageError("concurrent receive on one handle"));
    }
    return new Promise((resolve, reject) => {
      this.waiter = { resolve, reject };
    });
  }

  /** Block for the next STATE or END and fold it into the state.
   * Waits indefinitely unless `timeoutMs` is given. */
  async receive(timeoutMs?: number): Promise<ClientState> {
    if (this.closed) throw new UsageError("receive on a closed client");
    if (this.awaitingCommands) {
      throw new UsageError("receive called twice without sendCommands");
    }
    if (this.state.gameEnded) {
      throw new UsageError("receive after END; close the handle");
    }
    let payload: Buffer;
    if (timeoutMs === undefined) {
      payload = await this.nextPayload();
    } else {
      let timer: NodeJS.Timeout | undefined;
      const expiry = new Promise<never>((_, reject) => {
        timer = setTimeout(
          () => reject(new ClientError("receive timed out")),
          timeoutMs,
        );
      });
      try {
        payload = await Promise.race([this.nextPayload(), expiry]);
      } finally {
        clearTimeout(timer);
      }
    }
    if (this.transcript !== null) this.transcript.push(["recv", payload]);
    let msg: Message;
    try {
      msg = decodeMessage(payload);
    } catch (err) {
      throw new ServerFault(`undecodable message from server: ${(err as CodecError).message}`);
    }
    if (msg.kind === "state") {
      this.state.latestFrame = msg.frame;
      this.awaitingCommands = true;
    } else if (msg.kind === "end") {
      this.state.gameEnded = true;
      this.state.lastResult = msg.result;
      this.state.finalFrame = msg.finalFrame;
    } else if (msg.kind === "error") {
      throw new ServerFault(`server error ${msg.code}: ${msg.text}`);
    } else {
      throw new ServerFault(`unexpected message ${msg.kind}`);
    }
    return this.state;
  }

  /** Answer the pending STATE with one COMMANDS message (may be empty). */
  sendCommands(commands: Command[]): void {
    if (this.closed) throw new UsageError("sendCommands on a closed client");
    if (this.state.gameEnded) throw new UsageError("sendCommands after END");
    if (!this.awaitingCommands) {
      throw new UsageError("sendCommands without a pending state");
    }
    if (commands.length > MAX_COMMANDS) {
      throw new UsageError(`${commands.length} commands exceeds cap of ${MAX_COMMANDS}`);
    }
    const payload = encodeMessage({ kind: "commands", commands });
    if (this.transcript !== null) this.transcript.push(["send", payload]);
    this.socket.write(writeFramed(payload));
    this.awaitingCommands = false;
  }

  close(): void {
    if (!this.closed) {
      this.closed = true;
      this.socket.removeAllListeners("close");
      this.socket.destroy();
    }
  }
}

/** Drive one match to END with a policy; resolves to the result code. */
export async function playMatch(
  client: GameClient,
  policy: (frame: Frame, roster: UnitTypeSpec[]) => Command[],
  onFrame?: (frame: Frame) => void,
): Promise<number> {
  for (;;) {
    const state = await client.receive();
    if (state.gameEnded) {
      return state.lastResult!;
    }
    const frame = state.latestFrame!;
    if (onFrame !== undefined) onFrame(frame);
    client.sendCommands(policy(frame, client.roster));
  }
}
